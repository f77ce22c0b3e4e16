"""Automatic metrics: corpus BLEU-4, ROUGE-L, plan quality, template
statistics, and keyphrase coverage.  All scores live in [0, 1].
"""

import math
from collections import Counter


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates, references, smooth=False):
    """Corpus-level BLEU with clipped 1..4-gram precisions, geometric mean,
    and brevity penalty exp(min(0, 1 - ref_len/cand_len)).

    Unsmoothed by default: any zero n-gram precision zeroes the score.
    With smooth=True, zero counts get add-one smoothing on both numerator
    and denominator.
    """
    if len(candidates) != len(references):
        raise ValueError("candidate/reference length mismatch")
    matches = [0] * 4
    totals = [0] * 4
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            cn = _ngrams(cand, n)
            rn = _ngrams(ref, n)
            totals[n - 1] += sum(cn.values())
            matches[n - 1] += sum(min(c, rn[g]) for g, c in cn.items())
    log_prec = 0.0
    for m, t in zip(matches, totals):
        if smooth and (m == 0 or t == 0):
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_prec += math.log(m / t)
    if cand_len == 0:
        return 0.0
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return bp * math.exp(log_prec / 4.0)


def _lcs_len(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l_pair(candidate, reference):
    if not candidate or not reference:
        raise ValueError("rouge_l needs non-empty sequences")
    lcs = _lcs_len(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def rouge_l(candidates, references):
    """Mean LCS F-score over aligned pairs."""
    if len(candidates) != len(references):
        raise ValueError("candidate/reference length mismatch")
    scores = [rouge_l_pair(c, r) for c, r in zip(candidates, references)]
    return sum(scores) / len(scores) if scores else 0.0


def _plan_items(plan):
    """(phrase, sentence_index) -> start position, in plan order."""
    items = []
    for si, sent in enumerate(plan.sentences()):
        for phrase, start in sent.phrases:
            items.append(((tuple(phrase), si), start))
    return items


def plan_metrics(predicted, gold):
    """assignment_f1 over (phrase, sentence) pairs plus mean absolute start
    position error over the matched pairs (None when nothing matches)."""
    pred = _plan_items(predicted)
    ref = _plan_items(gold)
    pred_keys = Counter(k for k, _ in pred)
    ref_keys = Counter(k for k, _ in ref)
    tp = sum(min(c, ref_keys[k]) for k, c in pred_keys.items())
    if not pred or not ref or tp == 0:
        f1 = 0.0
    else:
        p = tp / len(pred)
        r = tp / len(ref)
        f1 = 2 * p * r / (p + r)
    pred_start = dict(pred)
    errors = [
        abs(pred_start[k] - start) for k, start in ref if k in pred_start
    ]
    mae = sum(errors) / len(errors) if errors else None
    return {"assignment_f1": f1, "position_mae": mae}


def template_stats(plans):
    """Per-plan means of layout tokens, sentence count and keyphrases per
    sentence, plus the pooled mean token gap between same-sentence adjacent
    keyphrases (None when no plan has two phrases in one sentence)."""
    tokens, sentences, kp_rates, gaps = [], [], [], []
    for plan in plans:
        sents = plan.sentences()
        tokens.append(sum(s.length for s in sents))
        sentences.append(len(sents))
        n_phrases = sum(len(s.phrases) for s in sents)
        kp_rates.append(n_phrases / len(sents) if sents else 0.0)
        for s in sents:
            for (ph_a, start_a), (ph_b, start_b) in zip(s.phrases, s.phrases[1:]):
                gaps.append(start_b - (start_a + len(ph_a) - 1) - 1)
    n = len(plans)
    return {
        "tokens": sum(tokens) / n if n else 0.0,
        "sentences": sum(sentences) / n if n else 0.0,
        "kp_per_sentence": sum(kp_rates) / n if n else 0.0,
        "kp_distance": sum(gaps) / len(gaps) if gaps else None,
    }


def kp_coverage(outputs, plans):
    """Fraction of planned phrases occurring contiguously in the paired
    output.  outputs may be Drafts or plain token lists."""
    total = hits = 0
    for out, plan in zip(outputs, plans):
        tokens = list(out.tokens) if hasattr(out, "tokens") else list(out)
        for phrase in plan.phrases():
            total += 1
            L = len(phrase)
            for i in range(len(tokens) - L + 1):
                if tuple(tokens[i : i + L]) == phrase:
                    hits += 1
                    break
    return hits / total if total else 0.0
