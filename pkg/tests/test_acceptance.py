"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""

import itertools
import time

import numpy as np
import pytest

from autr import numerics as nx
from autr.checkpoint import Checkpoint, OptimizerState
from autr.config import TrainConfig
from autr.data import N_RESERVED, build_vocab, encode_corpus, stack_ids, synth_corpus
from autr.decoding import (ImputationTask, beam_decode, impute, m_like_step, mask_sentence,
                           posterior, reconstruct)
from autr.encoder import encode, kl_gaussian
from autr.model import decoder_logprob, decoder_position_logprobs
from autr.numerics import Tensor
from autr.params import Dims, init_params
from autr.training import adam_step, anneal_weight, elbo_batch, evaluate, train
from autr.writer import run_writer

from conftest import record
from oracles import central_diff, rel_err, well_formed_sequences


# ------------------------------------------------- full-scale reference values

# Published full-scale numbers (53M-sentence corpus, 1M iterations).  They
# cannot be reproduced on a desk machine and are kept as metadata only.
FULL_SCALE_REFERENCE = {
    "elbo": {"autr_T30": -50.7, "autr_T40": -51.5, "gen_rnn": -52.3},
    "kl_range": (7.1, 14.0),
    "ppl_range": (37.4, 41.9),
    "imputation_recovery": {"autr": 0.341, "gen_rnn": 0.319},
}


def test_full_scale_results_are_reference_only():
    cfg = TrainConfig.full_scale()
    ok = (cfg.iterations == 1_000_000 and cfg.vocab_size == 20000 and cfg.L == 40
          and FULL_SCALE_REFERENCE["imputation_recovery"]["autr"] == 0.341)
    record("full-scale results recorded as reference metadata", ok,
           "full-scale config and published metrics stored; desk-scale criteria below substitute")
    assert ok


# -------------------------------------------------------------- gradients


GRAD_DIMS = dict(V=20, L=6, T=4, E=8, H=16, Dz=4, R=8)


def _loss_terms(params, ids, eps, mask, w, latent=None):
    """The full training loss split into per-position and per-dimension terms.

    ``latent`` = (z, kl terms) may be passed when only decoder weights move.
    """
    B = ids.shape[0]
    if latent is None:
        latent = _latent(params, ids, eps)
    z, kl = latent
    recon = decoder_position_logprobs(params, z, ids, mask).data
    return np.concatenate([-recon.ravel() / B, w * kl.ravel() / B])


def _latent(params, ids, eps):
    post = encode(ids, params)
    z = post.mu + nx.exp(post.logvar * 0.5) * eps.astype(post.mu.dtype)
    mu, lv = post.mu.data, post.logvar.data
    return z, 0.5 * (mu ** 2 + np.exp(lv) - 1.0 - lv)


def _finite_differences(p, ids, eps, mask, w, names):
    """Central differences of the loss in extended precision."""
    ext = p.astype(np.longdouble)
    out = {}
    with nx.precision(np.longdouble), nx.no_grad():
        # the encoder and the shared embedding move z; the rest cannot
        upstream = [n for n in names if n.startswith("enc_") or n == "embed"]
        rest = [n for n in names if n not in upstream]
        full = lambda: _loss_terms(ext, ids, eps, mask, w)
        out.update(zip(upstream, central_diff(full, [ext[n].data for n in upstream])))
        latent = _latent(ext, ids, eps)
        cached = lambda: _loss_terms(ext, ids, eps, mask, w, latent)
        out.update(zip(rest, central_diff(cached, [ext[n].data for n in rest])))
        total = float(full().sum())
    return [out[n].astype(np.float64) for n in names], total


@pytest.mark.slow
def test_gradient_suite():
    start = time.perf_counter()
    worst = {}
    with nx.precision(np.float64):
        for decoder in ("autr", "baseline"):
            p = init_params(Dims(decoder=decoder, **GRAD_DIMS), seed=3, dtype=np.float64)
            rng = np.random.default_rng(4)
            for _, t in p.items():  # nonzero biases so every path carries gradient
                if t.data.ndim == 1:
                    t.data = t.data + 0.1 * rng.standard_normal(t.shape)
            ids = np.array([[5, 9, 12, 7, 1, 0], [3, 17, 1, 0, 0, 0]])
            eps = rng.standard_normal((2, GRAD_DIMS["Dz"]))
            mask = np.array([[False, True, False, False, False, False],
                             [False, False, False, True, False, False]])
            w = 0.7
            loss, _ = elbo_batch(ids, p, w, eps=eps, mask=mask)
            names = [n for n, _ in p.items()]
            analytic = nx.backward(loss, [p[n] for n in names])
            numeric, total = _finite_differences(p, ids, eps, mask, w, names)
            assert abs(total - loss.item()) < 1e-12
            worst[decoder] = max(float(np.max(rel_err(a, n))) for a, n in zip(analytic, numeric))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    record("gradient suite", ok,
           f"max rel err autr {worst['autr']:.2e}, baseline {worst['baseline']:.2e} "
           f"(limit 1e-4); {elapsed:.1f}s (limit 60s)")
    assert ok


# ------------------------------------------------------ attention invariants


def test_attention_invariants():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    bad_range = bad_mono = bad_freeze = 0
    frozen_checks = 0
    with nx.precision(np.float64):
        for run in range(1000):
            L, T = int(rng.integers(4, 13)), int(rng.integers(2, 17))
            dims = Dims(V=8, L=L, E=3, T=T, H=6, Dz=3, R=3)
            p = init_params(dims, seed=int(rng.integers(2**31)), dtype=np.float64)
            # sharp gates drive slots to saturation so freezing gets exercised
            p["gate_W"].data = p["gate_W"].data * float(rng.choice([1.0, 10.0, 100.0]))
            z = rng.standard_normal((1, 3)) * float(rng.choice([1.0, 3.0]))
            _, tr = run_writer(z, p, trace=True)
            att = tr.attention_matrix()[:, 0]  # T x L
            canv = np.stack([c.canvas.data[0] for c in tr.canvases])  # T x L x E
            bad_range += int(att.min() < 0 or att.max() > 1 + 1e-6)
            bad_mono += int(np.any(np.diff(att, axis=0) < 0))
            for t in range(T - 1):
                for l in np.flatnonzero(att[t] >= 1 - 1e-9):
                    frozen_checks += 1
                    later = canv[t + 1:, l]
                    if any(r.tobytes() != canv[t, l].tobytes() for r in later):
                        bad_freeze += 1
    elapsed = time.perf_counter() - start
    ok = bad_range == bad_mono == bad_freeze == 0 and frozen_checks > 0 and elapsed < 30
    record("attention invariants", ok,
           f"1000 runs: {bad_range} range, {bad_mono} monotonicity, {bad_freeze}/{frozen_checks} "
           f"freezing violations; {elapsed:.1f}s (limit 30s)")
    assert ok


# ----------------------------------------------------------------- beam oracle


def test_beam_oracle():
    start = time.perf_counter()
    mismatches = non_monotone = 0
    max_gap = 0.0
    with nx.precision(np.float64):
        p = init_params(Dims(V=6, L=4, E=5, T=3, H=8, Dz=4, R=5), seed=11, dtype=np.float64)
        for _, t in p.items():
            t.data = t.data * 2.0  # peaked distributions make the argmax meaningful
        seqs = np.array(list(well_formed_sequences(6, 4)))
        rng = np.random.default_rng(12)
        for _ in range(100):
            z = rng.standard_normal(4)
            scores = decoder_logprob(p, np.tile(z, (len(seqs), 1)), seqs).data
            top = np.flatnonzero(scores == scores.max())
            i = min(top, key=lambda k: tuple(seqs[k]))
            sent, score = beam_decode(z, p, K=6 ** 4)
            gap = abs(score - scores[i])
            max_gap = max(max_gap, gap)
            mismatches += int(sent.ids != tuple(seqs[i]) or gap > 1e-6)
            by_k = [beam_decode(z, p, K)[1] for K in (1, 2, 4, 8)]
            non_monotone += int(any(b < a for a, b in zip(by_k, by_k[1:])))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and non_monotone == 0 and elapsed < 120
    record("beam oracle", ok,
           f"100 z: {mismatches} mismatches vs exhaustive search over {len(seqs)} sentences "
           f"(max |dlogp| {max_gap:.1e}), {non_monotone} non-monotone K sweeps; "
           f"{elapsed:.1f}s (limit 120s)")
    assert ok


# ------------------------------------------------------------- overfit run


@pytest.fixture(scope="module")
def overfit():
    corpus = synth_corpus(0, 32, 50, 9)
    vocab = build_vocab(corpus, 50)
    sents = encode_corpus(corpus, vocab, 10)
    cfg = TrainConfig.toy("autr")
    cpu0, wall0 = time.process_time(), time.perf_counter()
    ck = train(cfg, sents, vocab)
    cpu, wall = time.process_time() - cpu0, time.perf_counter() - wall0
    return dict(cfg=cfg, vocab=vocab, sents=sents, ck=ck, cpu=cpu, wall=wall)


@pytest.mark.slow
def test_overfit_run(overfit):
    cfg, sents, params = overfit["cfg"], overfit["sents"], overfit["ck"].params
    hits = sum(reconstruct(s, params, "posterior-mean", K=15) == s for s in sents)
    with nx.no_grad():
        kl = kl_gaussian(encode(sents, params)).data
    acc = hits / len(sents)
    ok = (len(overfit["vocab"]) <= 50 and cfg.T == 8 < cfg.L == 10 and cfg.dropout == 0
          and cfg.iterations <= 5000 and acc >= 0.9 and overfit["cpu"] < 600
          and kl.mean() > 0.1)
    record("overfit run", ok,
           f"{hits}/{len(sents)} exact ({acc:.1%}, need 90%) after {cfg.iterations} iterations; "
           f"mean KL {kl.mean():.2f} nat (min {kl.min():.2f}, need > 0.1); "
           f"{overfit['cpu']:.0f}s CPU (limit 600s)")
    assert ok


# ---------------------------------------------------------------- annealing


def test_kl_annealing_schedule():
    cases = []
    for end in (2, 10, 1000, 4000, 20000):
        cases += [anneal_weight(0, end) == 0.0, anneal_weight(end // 2, end) == 0.5,
                  anneal_weight(end, end) == 1.0, anneal_weight(end + 1, end) == 1.0,
                  anneal_weight(10 * end, end) == 1.0]
    cases.append(all(anneal_weight(i, 20000) == i / 20000 for i in range(0, 20001, 97)))
    ok = all(cases)
    record("KL annealing", ok, f"{sum(cases)}/{len(cases)} exact checks at 0, end/2, end, after")
    assert ok


# ---------------------------------------------------------------- imputation


@pytest.mark.slow
def test_imputation(overfit):
    start = time.perf_counter()
    params, sents = overfit["ck"].params, overfit["sents"]
    ids = stack_ids(sents)
    words = ids[(ids >= N_RESERVED)]
    most_frequent = int(np.bincount(words).argmax())
    rng = np.random.default_rng(2024)
    hit = base = total = 0
    decreases = 0
    for k in range(200):
        s = sents[int(rng.integers(len(sents)))]
        missing = mask_sentence(s, 0.3, rng)
        task = ImputationTask(np.array(s.ids), missing)
        res = impute(task, params, K=15, seed=k)
        truth = np.array(s.ids)[missing]
        hit += int((np.array(res.completion.ids)[missing] == truth).sum())
        base += int((truth == most_frequent).sum())
        total += int(missing.sum())
        decreases += sum(after < before for steps in res.history for before, after in steps)

    # independent route: hold one set of z samples fixed across several
    # M-like steps and score every completion with the full decoder
    fixed_decreases = steps_checked = 0
    with nx.no_grad():
        for k in range(50):
            s = sents[k % len(sents)]
            missing = mask_sentence(s, 0.3, rng)
            x = np.array(s.ids)
            x[missing] = rng.integers(N_RESERVED, params.dims.V, size=int(missing.sum()))
            mu, lv = posterior(x, params)
            zs = (mu + np.exp(0.5 * lv) * rng.standard_normal((5, params.dims.Dz))).astype(mu.dtype)
            bound = lambda seq: float(np.mean(decoder_logprob(params, zs, np.tile(seq, (5, 1))).data))
            prev = bound(x)
            for _ in range(4):
                x, _, _ = m_like_step(x, missing, zs, params, K=15)
                cur = bound(x)
                fixed_decreases += int(cur < prev - 1e-4 * abs(prev))
                steps_checked += 1
                prev = cur
    elapsed = time.perf_counter() - start
    ok = hit > base and decreases == 0 and fixed_decreases == 0
    record("imputation", ok,
           f"recovered {hit}/{total} masked words ({hit / total:.1%}) vs unigram "
           f"most-frequent {base}/{total} ({base / total:.1%}); bound decreases: "
           f"{decreases} in EM runs, {fixed_decreases}/{steps_checked} under fixed z; "
           f"{elapsed:.0f}s")
    assert ok


# ----------------------------------------------------- determinism / persistence


def _short_run(out_dir):
    corpus = synth_corpus(5, 32, 50, 9)
    vocab = build_vocab(corpus, 50)
    cfg = TrainConfig.toy("autr", iterations=150, anneal_end=100, log_every=10,
                          checkpoint_every=150, seed=9)
    ticks = itertools.count()
    train(cfg, encode_corpus(corpus, vocab, 10), vocab, out_dir=out_dir,
          clock=lambda: 0.25 * next(ticks))
    return (out_dir / "metrics.csv").read_bytes(), (out_dir / "model.autr").read_bytes()


def test_determinism_and_persistence(tmp_path):
    csv_a, ck_a = _short_run(tmp_path / "a")
    csv_b, ck_b = _short_run(tmp_path / "b")
    same_csv, same_ckpt = csv_a == csv_b, ck_a == ck_b

    identical = []
    for decoder in ("autr", "baseline"):
        cfg = TrainConfig.toy(decoder, L=8, vocab_size=30)
        p = init_params(cfg.dims(30), seed=1, dtype=np.float32)
        ck = Checkpoint(cfg, p, OptimizerState.zeros_like(p), 0,
                        vocab=build_vocab(["a b c"], 30))
        ck.save(tmp_path / f"{decoder}.autr")
        back = Checkpoint.load(tmp_path / f"{decoder}.autr")
        ids = np.random.default_rng(0).integers(3, 6, (4, 8))
        ids[:, 5], ids[:, 6:] = 1, 0
        eps = np.random.default_rng(1).standard_normal((4, cfg.Dz)).astype(np.float32)
        with nx.no_grad():
            outs = [elbo_batch(ids, q, 1.0, eps=eps)[0].data.tobytes()
                    + encode(ids, q).mu.data.tobytes()
                    + decoder_logprob(q, eps, ids).data.tobytes() for q in (p, back.params)]
        identical.append(outs[0] == outs[1])
    ok = same_csv and same_ckpt and all(identical)
    record("determinism and persistence", ok,
           f"metrics CSV identical: {same_csv}; checkpoint bytes identical: {same_ckpt}; "
           f"reloaded forward outputs bit-identical (autr, baseline): {identical}")
    assert ok


# --------------------------------------------------------------------- adam


def test_adam_reference():
    p = {"p": Tensor(np.array(1.0))}
    st = OptimizerState({"p": np.zeros(())}, {"p": np.zeros(())})
    adam_step(p, {"p": np.array(1.0)}, st, 0.1)
    m, v = 0.1, 0.001
    hand = 1.0 - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    err = abs(float(p["p"].data) - hand)

    q = {"p": Tensor(np.array(1.0))}
    st = OptimizerState({"p": np.zeros(())}, {"p": np.zeros(())})
    steps = None
    for i in range(1, 501):
        adam_step(q, {"p": 2.0 * q["p"].data}, st, 0.1)
        if steps is None and abs(float(q["p"].data)) < 1e-3:
            steps = i
    final = abs(float(q["p"].data))
    ok = err <= 1e-12 and final < 1e-3
    record("Adam reference", ok,
           f"first step error {err:.1e} (limit 1e-12); |p| after 500 steps on p^2 = {final:.1e} "
           f"(first below 1e-3 at step {steps})")
    assert ok
