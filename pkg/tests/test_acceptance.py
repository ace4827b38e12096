"""Acceptance suite: nine criteria, each with its tolerance and runtime budget.

Every test prints one ``PASS``/``FAIL`` line. Run directly with
``python3 tests/test_acceptance.py`` to get the nine lines without pytest.
"""

import random
import string
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from artifactlab.annotations import AnnotatedImage, Dataset, dataset_to_json, load_dataset, split  # noqa: E402
from artifactlab.ddpo import DDPOConfig, collect, policy_gradient, reinforce_gradient  # noqa: E402
from artifactlab.diffusion import (  # noqa: E402
    Denoiser, NoiseSchedule, checkpoint_bytes, checkpoint_from_bytes, denoising_loss_and_grad, step_logprob_grad,
)
from artifactlab.experiment import DEFAULT_MIX, PretrainConfig, artifact_rate, pretrain, run_rlaif  # noqa: E402
from artifactlab.instructions import (  # noqa: E402
    PROMPT_VERSION, BoundingBox, build_classification_prompt, build_detection_prompt, denormalize_box, normalize_box,
)
from artifactlab.metrics import (  # noqa: E402
    NO_ARTIFACTS_ID, detection_score, example_based_prf, exact_match_accuracy, iou, per_category_metrics,
)
from artifactlab.reward import RewardFunction, canonical_answers  # noqa: E402
from artifactlab.scenes import DIM, encode_pgm, render  # noqa: E402
from artifactlab.taxonomy import NO_ARTIFACTS, LabelSet, canonical_answer, default_taxonomy  # noqa: E402
from artifactlab.textsim import bertscore, embed  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
SEED = 20240501


def _report(number, title, ok, detail, elapsed, budget):
    status = "PASS" if ok and elapsed < budget else "FAIL"
    line = f"{status} criterion {number} ({title}): {detail}; {elapsed:.2f}s of {budget:.0f}s"
    return status == "PASS", line


def _run(number, title, budget, check, capsys=None):
    t0 = time.perf_counter()
    ok, detail = check()
    elapsed = time.perf_counter() - t0
    passed, line = _report(number, title, ok, detail, elapsed, budget)
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    return passed, line


# 1. metric oracle equivalence


def _random_labels(rnd, k):
    if rnd.random() < 0.25:
        return NO_ARTIFACTS
    return LabelSet(frozenset(rnd.sample(range(k), rnd.randint(1, k))))


def _random_box(rnd):
    x1, y1 = rnd.uniform(0, 0.8), rnd.uniform(0, 0.8)
    return (x1, y1, x1 + rnd.uniform(0.02, 0.5), y1 + rnd.uniform(0.02, 0.5))


def check_metrics():
    rnd = random.Random(SEED)
    worst = 0.0
    for _ in range(200):
        n, k = rnd.randint(1, 8), rnd.randint(1, 4)
        preds = [_random_labels(rnd, k) for _ in range(n)]
        golds = [_random_labels(rnd, k) for _ in range(n)]
        worst = max(worst, abs(exact_match_accuracy(preds, golds) - oracles.exact_match(preds, golds)))
        got = example_based_prf(preds, golds)
        worst = max(worst, *(abs(a - b) for a, b in zip(got, oracles.example_prf(preds, golds))))
        for key in [*range(k), NO_ARTIFACTS]:
            m = per_category_metrics(preds, golds, key)
            want = oracles.binary_metrics(preds, golds, oracles.NONE if key is NO_ARTIFACTS else key)
            worst = max(worst, *(abs(a - b) for a, b in zip((m.accuracy, m.precision, m.recall, m.f1), want)))
        a, b = _random_box(rnd), _random_box(rnd)
        worst = max(worst, abs(iou(BoundingBox(*a), BoundingBox(*b)) - oracles.box_iou(a, b)))
        gt = [(rnd.randrange(2), _random_box(rnd)) for _ in range(rnd.randint(0, 3))]
        pred = [(rnd.randrange(2), _random_box(rnd)) for _ in range(rnd.randint(0, 3))]
        got = detection_score([(c, BoundingBox(*bx)) for c, bx in pred], [(c, BoundingBox(*bx)) for c, bx in gt]).score
        worst = max(worst, abs(got - oracles.greedy_detection(pred, gt, oracles.box_iou)))
    return worst <= 1e-12, f"max deviation {worst:.2e} over 200 instances x 5 metrics (tol 1e-12)"


# 2. BertScore properties


def _random_text(rnd):
    words = ["".join(rnd.choice(string.ascii_letters) for _ in range(rnd.randint(1, 9))) for _ in range(rnd.randint(1, 6))]
    return " ".join(words)


def check_bertscore():
    rnd = random.Random(SEED)
    self_dev = 0.0
    for _ in range(100):
        s = _random_text(rnd)
        self_dev = max(self_dev, abs(bertscore(s, s).f - 1.0))
    sym_ok, oracle_dev = True, 0.0
    for _ in range(50):
        a, b = _random_text(rnd), _random_text(rnd)
        ab, ba = bertscore(a, b), bertscore(b, a)
        sym_ok &= ab.f == ba.f and ab.precision == ba.recall and ab.recall == ba.precision
        want = oracles.greedy_bertscore(embed(a).tolist(), embed(b).tolist())
        oracle_dev = max(oracle_dev, *(abs(x - y) for x, y in zip((ab.precision, ab.recall, ab.f), want)))
    ok = self_dev <= 1e-9 and sym_ok and oracle_dev <= 1e-12
    return ok, (f"self-score deviation {self_dev:.1e} (tol 1e-9), symmetry exact={sym_ok}, "
                f"oracle deviation {oracle_dev:.1e} on 50 pairs")


# 3. reward positivity and argmax


def check_reward():
    taxonomy = default_taxonomy()
    rf = RewardFunction()
    answers = canonical_answers(taxonomy)
    rnd = random.Random(SEED)
    for _ in range(50):
        ids = rnd.sample(range(len(taxonomy)), rnd.randint(2, len(taxonomy)))
        answers.append(canonical_answer(LabelSet(frozenset(ids)), taxonomy))
    rewards = {a: rf(a) for a in answers}
    low = min(rewards.values())
    best = max(rewards, key=rewards.get)
    ok = low > 0 and best == "No artifacts."
    return ok, f"{len(rewards)} answers, min reward {low:.4f}, argmax {best!r} ({rewards[best]:.4f})"


# 4. gradient correctness


def _fd_max_rel(fn, w, grad, rng, n=10, h=1e-5):
    # coordinates with a non-negligible gradient; below ~1e-6 the central
    # difference is dominated by rounding and a relative error is meaningless
    candidates = np.flatnonzero(np.abs(grad) > 1e-6)
    idx = rng.choice(candidates, size=n, replace=False)
    return max(oracles.rel_err(grad[i], oracles.central_difference(fn, w, i, h)) for i in idx)


def check_gradients():
    sched = NoiseSchedule()
    worst_mse = worst_logp = 0.0
    for seed in range(5):
        rng = np.random.default_rng(SEED + seed)
        net = Denoiser.init(DIM, rng, hidden=128, out_scale=1.0)
        w = net.flat()

        def with_weights(v):
            m = net.copy()
            m.set_flat(v)
            return m

        x0 = rng.standard_normal((8, DIM))
        c = rng.integers(2, size=8)
        t = rng.integers(1, sched.steps + 1, size=8)
        eps = rng.standard_normal((8, DIM))
        _, g = denoising_loss_and_grad(net, x0, c, t, eps, sched)
        worst_mse = max(worst_mse, _fd_max_rel(
            lambda v: denoising_loss_and_grad(with_weights(v), x0, c, t, eps, sched)[0], w, g, rng))
        ts = int(rng.integers(1, sched.steps + 1))
        xt, xp, cs = rng.standard_normal(DIM), rng.standard_normal(DIM), int(rng.integers(2))
        _, g = step_logprob_grad(net, xt, xp, ts, cs, sched)
        worst_logp = max(worst_logp, _fd_max_rel(
            lambda v: step_logprob_grad(with_weights(v), xt, xp, ts, cs, sched)[0], w, g, rng))
    ok = worst_mse < 1e-4 and worst_logp < 1e-4
    return ok, f"max relative error: MSE {worst_mse:.1e}, step log-prob {worst_logp:.1e} (tol 1e-4, 5 inits x 10 coords)"


# 5. estimator identities


def check_estimator():
    sched = NoiseSchedule()
    net = Denoiser.init(DIM, np.random.default_rng(SEED), hidden=64)
    cfg = DDPOConfig()

    def c_sampler(r):
        return int(r.integers(2))

    batch = collect(net, 8, c_sampler, lambda x: float(-np.sum(x ** 2)), np.random.default_rng(1), sched)
    grad, ratios = policy_gradient(batch, net, net.copy(), cfg, sched, return_ratios=True)
    ratios_one = bool(np.all(ratios == 1.0))
    ref = reinforce_gradient(batch, net, cfg, sched)
    rel = float(np.linalg.norm(grad - ref) / np.linalg.norm(ref))
    const = collect(net, 8, c_sampler, lambda x: 0.75, np.random.default_rng(2), sched)
    zero_norm = float(np.linalg.norm(policy_gradient(const, net, net.copy(), cfg, sched)))
    ok = ratios_one and rel < 1e-10 and zero_norm < 1e-12
    return ok, (f"ratios all exactly 1={ratios_one}, |estimator - REINFORCE|/|REINFORCE| {rel:.1e}, "
                f"constant-reward gradient norm {zero_norm:.1e} (tol 1e-12)")


# 6. end-to-end RLAIF


def check_rlaif():
    sched = NoiseSchedule()
    rng = np.random.default_rng(SEED)
    base = pretrain(DEFAULT_MIX, rng, PretrainConfig(), sched).denoiser
    before = artifact_rate(base, 512, seed=SEED + 1, schedule=sched)
    policy, history = run_rlaif(base, rng, DDPOConfig(batches=300, batch_size=24), sched)
    after = artifact_rate(policy, 512, seed=SEED + 2, schedule=sched)
    first, last = history.decile_means()
    ok = last > first and before >= 0.30 and after < 0.10 and len(history) <= 300
    return ok, (f"artifact rate {before:.1%} -> {after:.1%} on 512 fresh samples (need >=30% -> <10%), "
                f"decile reward {first:.4f} -> {last:.4f} over {len(history)} batches of 24")


# 7. format stability


def check_formats():
    taxonomy = default_taxonomy()
    results = {}
    results["prompts"] = (
        build_classification_prompt(taxonomy) == (FIXTURES / "golden" / f"classification_prompt_v{PROMPT_VERSION}.txt").read_text()
        and build_detection_prompt(taxonomy) == (FIXTURES / "golden" / f"detection_prompt_v{PROMPT_VERSION}.txt").read_text()
    )
    raw = (FIXTURES / "three_items.json").read_text()
    ds = load_dataset(FIXTURES / "three_items.json")
    results["dataset"] = dataset_to_json(ds) == raw
    x = np.zeros(DIM)
    x[:3] = 0.45, 0.55, 0.12
    x[3::2] = np.arange(6) * (np.pi / 3)
    x[4::2] = 0.2, 0.3, 0.15, 0.25, 0.05, 0.0
    golden = (FIXTURES / "golden" / "scene32.pgm").read_bytes()
    results["pgm"] = encode_pgm(render(x, 32)) == golden == encode_pgm(render(x, 32))
    net = Denoiser.init(DIM, np.random.default_rng(SEED), hidden=32)
    blob = checkpoint_bytes(net, NoiseSchedule())
    loaded, sched = checkpoint_from_bytes(blob)
    results["checkpoint"] = checkpoint_bytes(loaded, sched) == blob and np.array_equal(loaded.flat(), net.flat())
    return all(results.values()), ", ".join(f"{k} {'bit-exact' if v else 'MISMATCH'}" for k, v in results.items())


# 8. coordinate normalization


def check_normalization():
    examples = [
        ((0, 0, 336, 336), 336, 336, [0.0, 0.0, 1.0, 1.0]),
        ((0, 0, 512, 256), 512, 256, [0.0, 0.25, 1.0, 0.75]),
        ((336, 336, 672, 672), 672, 672, [0.5, 0.5, 1.0, 1.0]),
    ]
    exact = all(normalize_box(BoundingBox(*b), w, h).as_list() == want for b, w, h, want in examples)
    rnd = random.Random(SEED)
    worst = 0.0
    for _ in range(1000):
        w, h = rnd.randint(16, 2048), rnd.randint(16, 2048)
        x1, y1 = rnd.uniform(0, w - 2), rnd.uniform(0, h - 2)
        px = BoundingBox(x1, y1, rnd.uniform(x1 + 1, w), rnd.uniform(y1 + 1, h))
        norm = normalize_box(px, w, h)
        back = denormalize_box(norm, w, h)
        again = normalize_box(back, w, h)
        worst = max(worst, *(abs(a - b) for a, b in zip(back.as_list(), px.as_list())),
                    *(abs(a - b) for a, b in zip(again.as_list(), norm.as_list())))
    return exact and worst <= 1e-9, f"letterbox examples exact={exact}, round-trip deviation {worst:.1e} on 1000 boxes (tol 1e-9)"


# 9. split fidelity


def check_split():
    ds = Dataset(tuple(AnnotatedImage(f"img/{i:05d}.png", f"prompt {i}", "toy", NO_ARTIFACTS) for i in range(1310)))
    train, test = split(ds, 1045 / 1310, seed=SEED)
    train2, test2 = split(ds, 1045 / 1310, seed=SEED)
    refs = sorted(i.image_ref for i in train.items + test.items)
    stable = [i.image_ref for i in train.items] == [i.image_ref for i in train2.items] and test == test2
    ok = (len(train), len(test)) == (1045, 265) and stable and refs == sorted(i.image_ref for i in ds.items)
    return ok, f"sizes ({len(train)}, {len(test)}), seed-stable={stable}, exhaustive and disjoint={refs == sorted(i.image_ref for i in ds.items)}"


CRITERIA = [
    (1, "metric oracle equivalence", 10, check_metrics),
    (2, "BertScore properties", 5, check_bertscore),
    (3, "reward positivity and argmax", 5, check_reward),
    (4, "gradient correctness", 30, check_gradients),
    (5, "estimator identities", 10, check_estimator),
    (6, "end-to-end RLAIF", 600, check_rlaif),
    (7, "format stability", 5, check_formats),
    (8, "coordinate normalization", 2, check_normalization),
    (9, "split fidelity", 1, check_split),
]


@pytest.mark.parametrize("number,title,budget,check", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(number, title, budget, check, capsys):
    passed, line = _run(number, title, budget, check, capsys)
    assert passed, line


if __name__ == "__main__":
    results = [_run(*c[:2], c[2], c[3])[0] for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
