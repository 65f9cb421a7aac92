"""Gradient-descent training of the reduction heads over a frozen encoder.

Three losses share the forward pass: a margin loss on the blended score, a
margin loss on the CLS score alone, and an L1 penalty on the stopword gates
of both passages. Gradients are computed analytically in float64 and can be
verified component-by-component against central finite differences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .encoding import ReferenceEncoder
from .reduction import PASSAGE, QUERY, ReductionHeads, word_hash
from .scoring import sigmoid
from .tokenization import Vocabulary, tokenize

log = logging.getLogger(__name__)

FREEZE_GROUPS = ("cls", "token", "gate", "gamma")

# uni_proj sits on the token path, so "token" freezes it too
_GROUP_PARAMS = {
    "cls": ("cls_proj",),
    "token": ("token_proj", "uni_proj"),
    "gate": ("gate_weight", "gate_bias"),
    "gamma": ("mix_logit",),
}


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights for the three loss terms (not all zero)."""

    total: float = 1.0
    cls: float = 0.1
    gate: float = 0.75

    def __post_init__(self):
        values = (self.total, self.cls, self.gate)
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ValueError("loss weights must be finite and non-negative")
        if not any(values):
            raise ValueError("at least one loss weight must be positive")

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        """Parse the CLI form "1,0.1,0.75" (total, cls, gate)."""
        parts = text.split(",")
        if len(parts) != 3:
            raise ValueError("expected three comma-separated loss weights")
        return cls(*(float(p) for p in parts))


def margin_mse(s_pos, s_neg, teacher_margin) -> float:
    """Squared error between student and teacher score margins.

    Accepts scalars or equal-length arrays; the batch form is the mean of
    the per-triple squared errors.
    """
    s_pos = np.asarray(s_pos, dtype=np.float64)
    s_neg = np.asarray(s_neg, dtype=np.float64)
    teacher_margin = np.asarray(teacher_margin, dtype=np.float64)
    return float(np.mean(((s_pos - s_neg) - teacher_margin) ** 2))


@dataclass(frozen=True)
class TrainTriple:
    query: str
    positive: str
    negative: str
    teacher_margin: float

    def __post_init__(self):
        if not math.isfinite(self.teacher_margin):
            raise ValueError("teacher margin must be finite")


def load_triples(path) -> list[TrainTriple]:
    """Read training triples from JSON lines {"q","pos","neg","t_margin"}."""
    triples = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                triples.append(TrainTriple(
                    query=obj["q"], positive=obj["pos"], negative=obj["neg"],
                    teacher_margin=float(obj["t_margin"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"bad triple on line {number}: {exc}") from exc
    if not triples:
        raise ValueError("empty training set")
    return triples


@dataclass(frozen=True)
class TextFeatures:
    """Encoder-side values for one text; fixed while heads train."""

    stems: tuple[str, ...]
    hashes: np.ndarray          # (n_stems,) uint32
    mean_raw: np.ndarray        # (n_stems, encoder_dim) mean over subwords
    cls_raw: np.ndarray         # (encoder_dim,)


def prepare_text(text: str, vocab: Vocabulary, encoder: ReferenceEncoder,
                 stemming: bool = True) -> TextFeatures:
    t = tokenize(text, vocab, stemming=stemming)
    e = encoder.encode(t)
    stems = tuple(stem for stem, _ in t.unique_stems)
    mean_raw = np.zeros((len(stems), encoder.d_enc))
    for row, (_, positions) in enumerate(t.unique_stems):
        mean_raw[row] = e.token_raw[positions].mean(axis=0)
    hashes = np.array([word_hash(s) for s in stems], dtype=np.uint64)
    return TextFeatures(stems=stems, hashes=hashes, mean_raw=mean_raw,
                        cls_raw=np.asarray(e.cls_raw, dtype=np.float64))


@dataclass(frozen=True)
class PreparedTriple:
    query: TextFeatures
    positive: TextFeatures
    negative: TextFeatures
    teacher_margin: float


def prepare_triples(triples, vocab: Vocabulary, encoder: ReferenceEncoder,
                    stemming: bool = True) -> list[PreparedTriple]:
    cache: dict[str, TextFeatures] = {}

    def feat(text):
        if text not in cache:
            cache[text] = prepare_text(text, vocab, encoder, stemming)
        return cache[text]

    return [PreparedTriple(query=feat(t.query), positive=feat(t.positive),
                           negative=feat(t.negative),
                           teacher_margin=t.teacher_margin)
            for t in triples]


@dataclass
class _TextState:
    """Forward-pass intermediates for one text under current heads."""

    feat: TextFeatures
    projected: np.ndarray       # (n, token_dim) before gating
    pre_gate: np.ndarray | None  # gate pre-activation, passages only
    gate: np.ndarray            # post-ReLU gate (queries: all ones)
    kept: np.ndarray            # indices with positive gate
    gated: np.ndarray           # gate-scaled vectors (queries: = projected)
    words: np.ndarray           # final word matrix fed to matching
    cls: np.ndarray


def _forward_text(feat: TextFeatures, heads: ReductionHeads,
                  kind: str) -> _TextState:
    projected = feat.mean_raw @ heads.token_proj
    cls = feat.cls_raw @ heads.cls_proj
    n = projected.shape[0]
    if kind == PASSAGE:
        pre_gate = projected @ heads.gate_weight + heads.gate_bias
        gate = np.maximum(pre_gate, 0.0)
        kept = np.flatnonzero(gate > 0.0)
        gated = gate[:, None] * projected
    else:
        pre_gate = None
        gate = np.ones(n)
        kept = np.arange(n)
        gated = projected
    words = gated @ heads.uni_proj if heads.uni_proj is not None else gated
    return _TextState(feat=feat, projected=projected, pre_gate=pre_gate,
                      gate=gate, kept=kept, gated=gated, words=words, cls=cls)


def _match_words(q: _TextState, p: _TextState, em: bool):
    """Best passage word per query word; ties go to the lowest index.

    Returns (token score, matches) where matches[j] is the passage word
    index or None when nothing is eligible. Zero-gated passage words are
    out of the running, mirroring their removal from the index.
    """
    matches: list[int | None] = []
    score = 0.0
    for j in range(len(q.feat.stems)):
        candidates = p.kept
        if em:
            candidates = candidates[
                p.feat.hashes[candidates] == q.feat.hashes[j]]
        if candidates.size == 0:
            matches.append(None)
            continue
        dots = p.words[candidates] @ q.words[j]
        best = int(np.argmax(dots))
        matches.append(int(candidates[best]))
        score += float(dots[best])
    return score, matches


def _zero_grads(heads: ReductionHeads) -> dict:
    grads = {
        "cls_proj": np.zeros_like(heads.cls_proj),
        "token_proj": np.zeros_like(heads.token_proj),
        "gate_weight": np.zeros_like(heads.gate_weight),
        "gate_bias": 0.0,
        "mix_logit": 0.0,
    }
    if heads.uni_proj is not None:
        grads["uni_proj"] = np.zeros_like(heads.uni_proj)
    return grads


def _evaluate(triples: list[PreparedTriple], heads: ReductionHeads,
              weights: LossWeights, em: bool, want_grads: bool):
    """Shared forward (and optional backward) over the whole batch.

    Returns (total, parts, grads-or-None, structure) where structure is a
    hashable record of every kept-set and argmax decision; finite-difference
    checking uses it to spot evaluations that crossed a kink.
    """
    if not triples:
        raise ValueError("empty batch")
    batch = len(triples)
    sg = sigmoid(heads.mix_logit)
    grads = _zero_grads(heads) if want_grads else None

    loss_total = 0.0
    loss_cls = 0.0
    loss_gate = 0.0
    structure = []

    for triple in triples:
        qs = _forward_text(triple.query, heads, QUERY)
        sides = []
        for feat in (triple.positive, triple.negative):
            ps = _forward_text(feat, heads, PASSAGE)
            s_cls = float(qs.cls @ ps.cls)
            s_token, matches = _match_words(qs, ps, em)
            s_total = sg * s_cls + (1.0 - sg) * s_token
            sides.append((ps, s_cls, s_token, s_total, matches))
            structure.append((tuple(ps.kept.tolist()), tuple(matches)))
            loss_gate += float(ps.gate.sum()) / batch

        (_, cls_p, tok_p, total_p, _), (_, cls_n, tok_n, total_n, _) = sides
        err_total = (total_p - total_n) - triple.teacher_margin
        err_cls = (cls_p - cls_n) - triple.teacher_margin
        loss_total += err_total ** 2 / batch
        loss_cls += err_cls ** 2 / batch

        if not want_grads:
            continue

        coeff_total = weights.total * 2.0 * err_total / batch
        coeff_cls = weights.cls * 2.0 * err_cls / batch
        gate_push = weights.gate / batch
        query_vec_grad = np.zeros_like(qs.projected)

        for sign, (ps, s_cls, s_token, _, matches) in zip(
                (1.0, -1.0), sides):
            g_total = coeff_total * sign
            g_cls = g_total * sg + coeff_cls * sign
            g_token = g_total * (1.0 - sg)
            grads["mix_logit"] += g_total * sg * (1.0 - sg) * (s_cls - s_token)
            grads["cls_proj"] += g_cls * (
                np.outer(triple.query.cls_raw, ps.cls)
                + np.outer(ps.feat.cls_raw, qs.cls))

            g_words_q = np.zeros_like(qs.words)
            g_words_p = np.zeros_like(ps.words)
            for j, i in enumerate(matches):
                if i is None:
                    continue
                g_words_q[j] += g_token * ps.words[i]
                g_words_p[i] += g_token * qs.words[j]

            if heads.uni_proj is not None:
                grads["uni_proj"] += (qs.gated.T @ g_words_q
                                      + ps.gated.T @ g_words_p)
                g_words_q = g_words_q @ heads.uni_proj.T
                g_gated_p = g_words_p @ heads.uni_proj.T
            else:
                g_gated_p = g_words_p
            query_vec_grad += g_words_q

            g_proj_p = ps.gate[:, None] * g_gated_p
            g_gate = np.einsum("nd,nd->n", g_gated_p, ps.projected)
            g_gate += gate_push
            g_pre = np.where(ps.pre_gate > 0.0, g_gate, 0.0)
            grads["gate_weight"] += ps.projected.T @ g_pre
            grads["gate_bias"] += float(g_pre.sum())
            g_proj_p += np.outer(g_pre, heads.gate_weight)
            grads["token_proj"] += ps.feat.mean_raw.T @ g_proj_p

        grads["token_proj"] += triple.query.mean_raw.T @ query_vec_grad

    total = (weights.total * loss_total + weights.cls * loss_cls
             + weights.gate * loss_gate)
    parts = {"total": total, "margin_total": loss_total,
             "margin_cls": loss_cls, "gate": loss_gate}
    return total, parts, grads, tuple(structure)


def total_loss(triples, heads, weights, em: bool = False):
    """Weighted loss over a batch; returns (total, per-term values)."""
    total, parts, _, _ = _evaluate(triples, heads, weights, em, False)
    return total, parts


def loss_and_gradients(triples, heads, weights, em: bool = False):
    total, parts, grads, _ = _evaluate(triples, heads, weights, em, True)
    return total, parts, grads


def train_step(triples, heads, weights, lr: float, em: bool = False,
               freeze: tuple = ()):
    """One vanilla gradient-descent step; returns (new heads, loss parts)."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    unknown = set(freeze) - set(FREEZE_GROUPS)
    if unknown:
        raise ValueError(f"unknown freeze group(s): {sorted(unknown)}")
    total, parts, grads = loss_and_gradients(triples, heads, weights, em)
    if not math.isfinite(total):
        raise RuntimeError(f"non-finite loss: {parts}")
    frozen = {name for group in freeze for name in _GROUP_PARAMS[group]}
    updated = heads.copy()
    for name, grad in grads.items():
        if name in frozen:
            continue
        value = getattr(updated, name)
        if isinstance(value, np.ndarray):
            value -= lr * grad
        else:
            setattr(updated, name, value - lr * grad)
    return updated, parts


def train(triples, heads, weights, lr: float, steps: int, em: bool = False,
          freeze: tuple = ()):
    """Full-batch descent for a fixed number of steps.

    Returns (final heads, history of per-step loss parts).
    """
    history = []
    for step in range(steps):
        heads, parts = train_step(triples, heads, weights, lr, em, freeze)
        history.append(parts)
        if step % 25 == 0 or step == steps - 1:
            log.info("step %d: loss %.6f", step, parts["total"])
    return heads, history


@dataclass
class GradCheckReport:
    checked: int = 0
    passed: int = 0
    failures: list = field(default_factory=list)   # (name, idx, analytic, fd)
    excluded: list = field(default_factory=list)   # (name, idx, reason)

    @property
    def ok(self) -> bool:
        return self.checked > 0 and not self.failures

    @property
    def pass_rate(self) -> float:
        return self.passed / self.checked if self.checked else 0.0


def grad_check(heads, triples, weights, eps: float = 1e-4,
               tol: float = 1e-3, em: bool = False) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Components whose +-eps evaluations disagree on a kept-set or argmax
    decision sit on a kink (ReLU boundary or max tie) and are excluded, as
    are gate-path components when any pre-activation is within 10*eps of
    zero. Everything else must match to the relative tolerance.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _, _, grads, _ = _evaluate(triples, heads, weights, em, True)

    near_kink = False
    for triple in triples:
        for feat in (triple.positive, triple.negative):
            pre = _forward_text(feat, heads, PASSAGE).pre_gate
            if pre.size and np.min(np.abs(pre)) < 10 * eps:
                near_kink = True
    gate_path = {"token_proj", "gate_weight", "gate_bias"}

    report = GradCheckReport()
    probe = heads.copy()
    for name, grad in grads.items():
        flat = np.atleast_1d(np.asarray(grad, dtype=np.float64)).ravel()
        for idx in range(flat.size):
            if near_kink and name in gate_path:
                report.excluded.append((name, idx, "pre-activation near zero"))
                continue

            def shifted(delta):
                value = getattr(probe, name)
                if isinstance(value, np.ndarray):
                    original = value.ravel()[idx]
                    value.ravel()[idx] = original + delta
                    out = _evaluate(triples, probe, weights, em, False)
                    value.ravel()[idx] = original
                else:
                    setattr(probe, name, value + delta)
                    out = _evaluate(triples, probe, weights, em, False)
                    setattr(probe, name, value)
                return out[0], out[3]

            plus, structure_plus = shifted(eps)
            minus, structure_minus = shifted(-eps)
            if structure_plus != structure_minus:
                report.excluded.append((name, idx, "kink crossed within eps"))
                continue
            fd = (plus - minus) / (2 * eps)
            analytic = float(flat[idx])
            report.checked += 1
            gap = abs(analytic - fd)
            if gap <= max(tol * max(abs(analytic), abs(fd)), 1e-8):
                report.passed += 1
            else:
                report.failures.append((name, idx, analytic, fd))
    return report
