import numpy as np
import pytest
import torch

from planfill.corpus import Document, GrammarConfig, synth_corpus
from planfill.nnet import ModelConfig, build_model
from planfill.vocab import build_vocab

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_docs():
    rng = np.random.default_rng(11)
    cfg = GrammarConfig(n_topics=6, entities_per_topic=6, filler_pool=120,
                        entity_pool=12)
    return synth_corpus(cfg, 60, rng)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_docs):
    return build_vocab(tiny_docs, min_count=1)


def small_config(vocab_size, kind, **kw):
    defaults = dict(
        vocab_size=vocab_size, d_model=32, n_heads=2, n_layers=2, ffn_dim=64,
        max_len=160, dropout=0.0, kind=kind,
        uses_segment_embeddings=kind != "causal_lm", n_segments=3,
    )
    defaults.update(kw)
    return ModelConfig(**defaults)


@pytest.fixture()
def small_seq2seq(tiny_vocab):
    torch.manual_seed(3)
    return build_model(small_config(len(tiny_vocab), "encoder_decoder")).eval()


@pytest.fixture()
def small_planner(tiny_vocab):
    torch.manual_seed(4)
    return build_model(
        small_config(len(tiny_vocab), "bidir_causal_hybrid", n_segments=2)
    ).eval()


@pytest.fixture()
def small_lm(tiny_vocab):
    torch.manual_seed(5)
    return build_model(small_config(len(tiny_vocab), "causal_lm")).eval()
