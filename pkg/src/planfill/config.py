"""Flat key=value configuration with one section per module, plus seed
expansion.

Every hyperparameter the pipeline consumes has a key here; values carrying
a published default keep it (k=50, p=0.9, temperature=1.0, refine
iterations 5, 3 samples per pass, window 5, position-loss weight 0.1,
gradient clip 1.0, peak learning rate 5e-5).
"""

import configparser
import copy
import hashlib

DEFAULTS = {
    "corpus": {
        "n_docs": 13334,
        "n_topics": 40,
        "entities_per_topic": 8,
        "min_sentences": 4,
        "max_sentences": 6,
        "kp_coverage": 0.30,
        "min_count": 1,
        "train_fraction": 0.75,
        "valid_fraction": 0.125,
        "test_fraction": 0.125,
        "llr_threshold": 10.83,
        "max_phrase_len": 10,
    },
    "model": {
        "d_model": 128,
        "n_heads": 4,
        "n_layers": 2,
        "ffn_dim": 512,
        "max_len": 320,
        "dropout": 0.1,
    },
    "planner": {
        "batch_size": 20,
        "max_steps": 1500,
        "lr_max": 5e-5,
        "warmup": 500,
        "grad_clip": 1.0,
        "position_loss_weight": 0.1,
    },
    "generator": {
        "batch_size": 10,
        "max_steps": 2000,
        "lr_max": 5e-5,
        "warmup": 500,
        "grad_clip": 1.0,
        "strategy": "non_keyphrase",
        "mask_fraction_low": 0.3,
        "mask_fraction_high": 0.8,
        "max_target_len": 128,
    },
    "lm": {
        "batch_size": 16,
        "max_steps": 1200,
        "lr_max": 5e-5,
        "warmup": 500,
        "grad_clip": 1.0,
    },
    "decode": {
        "k": 50,
        "p": 0.9,
        "temperature": 1.0,
        "enforce": True,
        "window": 5,
        "samples": 3,
        "max_len": 128,
    },
    "refine": {
        "iterations": 5,
    },
    "eval": {
        "max_samples": 0,  # 0 = whole split
        "smooth_bleu": False,
    },
}


class ConfigError(ValueError):
    pass


def _coerce(section, key, raw, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"invalid boolean for {section}.{key}: {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {section}.{key}: {raw!r}") from None
    return raw


def load_config(path=None, overrides=None):
    """Defaults, optionally overlaid with an INI-style file and a list of
    section.key=value override strings.  Unknown keys are an error."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in cfg:
                raise ConfigError(f"unknown config section: {section}")
            for key, raw in parser.items(section):
                if key not in cfg[section]:
                    raise ConfigError(f"unknown config key: {section}.{key}")
                cfg[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])
    for item in overrides or []:
        target, _, raw = item.partition("=")
        section, _, key = target.partition(".")
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config key: {target}")
        cfg[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])
    return cfg


def save_config(cfg, path):
    parser = configparser.ConfigParser()
    for section, items in cfg.items():
        parser[section] = {k: str(v) for k, v in items.items()}
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)


def derive_seed(seed, label):
    """Stable per-component sub-seed from a global seed and a label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)
