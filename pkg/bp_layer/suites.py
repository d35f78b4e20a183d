"""Seeded property suites run by ``bp-layer check``.

Every suite raises CheckFailure on its first failing case and otherwise
returns a report with the worst deviation it saw.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from bp_layer import log
from bp_layer.chain_dp import (
    ChainView,
    JumpChain,
    MatrixChain,
    RedistCoeffs,
    default_redistribution,
    dp_backward,
    dp_forward,
    rdp_backward,
    rdp_forward,
)
from bp_layer.config import ModelParams, TrainConfig
from bp_layer.errors import ERROR_UNKNOWN_SUITE, CheckFailure, InputError
from bp_layer.grid_model import (
    CompatMatrix,
    EdgeWeights,
    FullMatrix,
    JumpParams,
    PairwiseSpec,
    Temperature,
    TruncatedJump,
    UnaryVolume,
)
from bp_layer.inference import (
    read_beliefs,
    sgm,
    sgm_backward,
    softmax_backward,
    sweep_bp_backward,
    sweep_bp_forward,
    tbca,
)
from bp_layer.learning import (
    huber_loss,
    metrics,
    nll_loss,
    refine_backward,
    refine_basic,
    sample_loss,
    train_toy,
)
from bp_layer.oracle import (
    brute_max_marginals,
    cross_tree_edges,
    fd_gradcheck,
    perturb_ties,
    smax,
)
from bp_layer.pipeline import run_segmentation, run_stereo, stereo_sample
from bp_layer.pyramid import backward_hierarchy, run_hierarchy
from bp_layer.synthetic import segmentation_scene, stereo_scene

GRAD_TOLERANCE: float = 1e-4
GRAD_STEP: float = 1e-4
ORDERING_GAP: float = 1.0  # percentage points of bad1
ORDERING_SCENES: int = 3
ORDERING_NOISE: float = 20.0
ORDERING_BLUR: float = 2.0
TRAIN_NOISE: float = 5.0
TRAIN_START_TEMPERATURE: float = 0.1


@dataclass
class SuiteReport:
    name: str
    cases: int
    worst: float

    def __str__(self) -> str:
        return f"{self.name}: {self.cases} cases passed, worst deviation {self.worst:.3e}"


SUITES: Dict[str, Callable[[np.random.Generator, int], SuiteReport]] = {}


def suite(name: str):
    def register(function):
        SUITES[name] = function
        return function

    return register


def run_suite(name: str, seed: int = 0, workers: int = 1) -> SuiteReport:
    """Run one suite by name.

    Raises:
        InputError: Unknown suite name.
        CheckFailure: A case failed.
    """
    if name not in SUITES:
        raise InputError(ERROR_UNKNOWN_SUITE.format(name=name, choices=", ".join(sorted(SUITES))))
    log.info(f"Running check suite {name}...")
    report = SUITES[name](np.random.default_rng(seed), workers)
    log.info(f"Check suite {name} done!")
    return report


def random_jump(rng: np.random.Generator) -> TruncatedJump:
    return TruncatedJump(JumpParams.from_penalties(rng.uniform(0.1, 1.5, size=5)))


def random_matrix(rng: np.random.Generator, labels: int) -> FullMatrix:
    return FullMatrix(
        CompatMatrix(rng.uniform(0.0, 1.0, (labels, labels)), rng.uniform(0.0, 1.0, (labels, labels)))
    )


def random_weights(rng: np.random.Generator, height: int, width: int) -> EdgeWeights:
    return EdgeWeights(*(rng.uniform(0.5, 1.5, (height, width)) for _ in range(4)))


def random_spec(
    rng: np.random.Generator, case: int, labels: int, height: int, width: int
) -> PairwiseSpec:
    """Alternates jump and matrix models, every other pair with edge weights."""
    spec = random_jump(rng) if case % 2 == 0 else random_matrix(rng, labels)
    if case % 4 >= 2:
        weights = random_weights(rng, height, width)
        if isinstance(spec, TruncatedJump):
            return TruncatedJump(JumpParams.from_penalties(spec.params.penalties, weights))
        return FullMatrix(spec.matrix, weights)
    return spec


def _deviation_up_to_constant(got: np.ndarray, expected: np.ndarray) -> float:
    return float(np.max(np.abs((got - got.max()) - (expected - expected.max()))))


def _compare_roots(
    name: str, case: int, log_beliefs: np.ndarray, spec: PairwiseSpec, g: np.ndarray
) -> float:
    height, width, labels = g.shape
    unaries = g.reshape(height * width, labels)
    worst = 0.0
    for y in range(height):
        for x in range(width):
            edges = cross_tree_edges(spec, height, width, labels, (y, x))
            expected = brute_max_marginals(unaries, edges)[y * width + x]
            got = log_beliefs[y, x]
            deviation = _deviation_up_to_constant(got, expected)
            if deviation > 1e-9 or np.argmax(got) != np.argmax(expected):
                raise CheckFailure(
                    f"{name} case {case} pixel {(y, x)}: got {got}, enumeration gives {expected}"
                )
            worst = max(worst, deviation)
    return worst


@suite("chain")
def chain_suite(rng: np.random.Generator, workers: int) -> SuiteReport:
    """Horizontal sweep max-marginals on single rows against enumeration."""
    worst = 0.0
    cases = 200
    for case in range(cases):
        width = int(rng.integers(1, 7))
        labels = int(rng.integers(2, 5))
        spec = random_spec(rng, case, labels, 1, width)
        g = perturb_ties(rng.normal(size=(1, width, labels)), rng)
        _, tape = sweep_bp_forward(UnaryVolume(g), spec, workers=workers)
        worst = max(worst, _compare_roots("chain", case, tape.a, spec, g))
    return SuiteReport("chain", cases, worst)


@suite("crosstree")
def crosstree_suite(rng: np.random.Generator, workers: int) -> SuiteReport:
    """Sweep BP log-beliefs on 3x3 grids against their cross trees."""
    worst = 0.0
    cases = 100
    for case in range(cases):
        labels = int(rng.integers(2, 4))
        spec = random_spec(rng, case, labels, 3, 3)
        g = perturb_ties(rng.normal(size=(3, 3, labels)), rng)
        _, tape = sweep_bp_forward(UnaryVolume(g), spec, workers=workers)
        worst = max(worst, _compare_roots("crosstree", case, tape.log_beliefs, spec, g))
    return SuiteReport("crosstree", cases, worst)


def _check_gradient(name: str, case: int, function, point, gradient, seed: int) -> float:
    error = fd_gradcheck(function, point, gradient, step=GRAD_STEP, count=6, seed=seed)
    if error > GRAD_TOLERANCE:
        raise CheckFailure(f"gradcheck {name} case {case}: relative error {error:.3e}")
    return error


def _random_chain(rng: np.random.Generator, case: int, chains: int, length: int, labels: int) -> ChainView:
    weights = rng.uniform(0.5, 1.5, (chains, length - 1))
    g = perturb_ties(rng.normal(size=(chains, length, labels)), rng)
    if case % 2 == 0:
        return ChainView(g, JumpChain(rng.uniform(0.1, 1.5, 5), weights))
    return ChainView(g, MatrixChain(rng.uniform(0.0, 1.0, (labels, labels)), weights))


def _gradcheck_cases(rng: np.random.Generator, case: int) -> List[float]:
    errors = []

    # Backprop DP in the unaries and the pairwise parameters
    view = _random_chain(rng, case, 2, 5, 3)
    seed_grad = rng.normal(size=view.unaries.shape)
    messages, argmaxes = dp_forward(view, normalize=False)
    grad = dp_backward(view, argmaxes, seed_grad)

    def dp_of_unaries(g):
        return float(np.sum(seed_grad * dp_forward(view.with_unaries(g), normalize=False)[0]))

    errors.append(_check_gradient("dp", case, dp_of_unaries, view.unaries, grad.d_unary, case))

    def dp_of_params(params):
        pairwise = type(view.pairwise)(params, view.pairwise.weights)
        return float(np.sum(seed_grad * dp_forward(ChainView(view.unaries, pairwise), normalize=False)[0]))

    errors.append(
        _check_gradient("dp-params", case, dp_of_params, _pairwise_params(view), grad.pairwise.params, case)
    )

    # Redistribution DP
    right = rng.normal(size=view.unaries.shape)
    r = default_redistribution(2, 5).r
    r[:, 1:-1] = rng.uniform(0.0, 1.0, (2, 3))
    coeffs = RedistCoeffs(r)
    _, r_argmaxes = rdp_forward(view, right, coeffs)
    r_grad = rdp_backward(view, r_argmaxes, coeffs, seed_grad)

    def rdp_of_unaries(g):
        return float(np.sum(seed_grad * rdp_forward(view.with_unaries(g), right, coeffs)[0]))

    def rdp_of_right(m):
        return float(np.sum(seed_grad * rdp_forward(view, m, coeffs)[0]))

    errors.append(_check_gradient("rdp", case, rdp_of_unaries, view.unaries, r_grad.d_unary, case))
    errors.append(
        _check_gradient(
            "rdp-right", case, rdp_of_right, right, (1.0 - coeffs.r)[..., None] * r_grad.d_unary, case
        )
    )

    # Sweep BP and SGM through the NLL
    labels = 3
    spec = random_spec(rng, case, labels, 4, 4)
    g = perturb_ties(rng.normal(size=(4, 4, labels)), rng)
    target = rng.integers(0, labels, (4, 4)).astype(np.float64)
    beliefs, tape = sweep_bp_forward(UnaryVolume(g), spec)
    _, d_beliefs = nll_loss(beliefs.probs, target)
    bundle = sweep_bp_backward(tape, d_beliefs)

    def sweep_nll(unaries):
        return nll_loss(sweep_bp_forward(UnaryVolume(unaries), spec)[0].probs, target)[0]

    errors.append(_check_gradient("sweep", case, sweep_nll, g, bundle.d_unary, case))

    b, sgm_tape = sgm(UnaryVolume(g), spec)
    sgm_beliefs = read_beliefs(b).probs
    _, d_sgm = nll_loss(sgm_beliefs, target)
    sgm_bundle = sgm_backward(sgm_tape, softmax_backward(sgm_beliefs, d_sgm))

    def sgm_nll(unaries):
        return nll_loss(read_beliefs(sgm(UnaryVolume(unaries), spec)[0]).probs, target)[0]

    errors.append(_check_gradient("sgm", case, sgm_nll, g, sgm_bundle.d_unary, case))

    # Losses and refinement
    y = rng.normal(size=(4, 4)) * 2.0
    y_target = rng.normal(size=(4, 4))
    _, d_y = huber_loss(y, y_target)
    errors.append(
        _check_gradient("huber", case, lambda v: huber_loss(v, y_target)[0], y, d_y, case)
    )

    probs = read_beliefs(g).probs
    weights = rng.normal(size=(4, 4))
    refined, refine_tape = refine_basic(probs, 1)
    d_probs = refine_backward(refine_tape, weights)

    def refine_of_logits(logits):
        return float(np.sum(weights * refine_basic(read_beliefs(logits).probs, 1)[0]))

    errors.append(
        _check_gradient("refine", case, refine_of_logits, g, softmax_backward(probs, d_probs), case)
    )

    # Pyramid, in the temperature
    q_levels = [read_beliefs(rng.normal(size=(4, 4, 2))).probs, read_beliefs(rng.normal(size=(8, 8, 4))).probs]
    specs = [random_jump(rng), random_jump(rng)]
    targets = [rng.integers(0, 2, (4, 4)).astype(float), rng.integers(0, 4, (8, 8)).astype(float)]
    temperature = float(rng.uniform(0.5, 2.0))
    result = run_hierarchy(q_levels, specs, Temperature(temperature))
    d_levels = [nll_loss(b_level, t_level)[1] for b_level, t_level in zip(result.beliefs, targets)]
    pyramid_grad = backward_hierarchy(result, d_levels, Temperature(temperature))

    def pyramid_loss(t):
        levels = run_hierarchy(q_levels, specs, Temperature(float(t[0]))).beliefs
        return sum(nll_loss(b_level, t_level)[0] for b_level, t_level in zip(levels, targets))

    errors.append(
        _check_gradient(
            "pyramid",
            case,
            pyramid_loss,
            np.array([temperature]),
            np.array([pyramid_grad.d_temperature]),
            case,
        )
    )
    return errors


def _pairwise_params(view: ChainView) -> np.ndarray:
    if isinstance(view.pairwise, JumpChain):
        return view.pairwise.penalties
    return view.pairwise.matrix


@suite("gradcheck")
def gradcheck_suite(rng: np.random.Generator, workers: int) -> SuiteReport:
    """Every backward pass against central differences."""
    worst = 0.0
    cases = 50
    for case in range(cases):
        worst = max(worst, max(_gradcheck_cases(rng, case)))
    return SuiteReport("gradcheck", cases, worst)


@suite("tbca")
def tbca_suite(rng: np.random.Generator, workers: int) -> SuiteReport:
    """The TBCA dual never decreases."""
    worst = 0.0
    cases = 50
    for case in range(cases):
        spec = random_spec(rng, case, 3, 6, 6)
        g = rng.normal(size=(6, 6, 3))
        _, trace = tbca(UnaryVolume(g), spec, iters=20, workers=workers)
        drops = -np.diff(trace)
        drop = float(drops.max()) if len(drops) else 0.0
        if drop > 1e-9:
            raise CheckFailure(f"tbca case {case}: dual decreased by {drop:.3e}")
        worst = max(worst, drop)
    return SuiteReport("tbca", cases, worst)


@suite("smax")
def smax_suite(rng: np.random.Generator, workers: int) -> SuiteReport:
    """max <= smax <= max + log n on random vectors."""
    total = 0
    worst = 0.0
    per_size = 100_000 // 64 + 1
    for n in range(1, 65):
        values = rng.normal(scale=10.0, size=(per_size, n))
        largest = values.max(axis=1)
        smooth = smax(values, axis=1)
        below = float(np.max(largest - smooth))
        above = float(np.max(smooth - largest - np.log(n)))
        if below > 1e-12 or above > 1e-12:
            raise CheckFailure(f"smax n={n}: bound violated by {max(below, above):.3e}")
        worst = max(worst, below, above)
        total += per_size
    return SuiteReport("smax", total, worst)


@suite("sgm")
def sgm_suite(rng: np.random.Generator, workers: int) -> SuiteReport:
    """On single rows SGM equals the horizontal half of a sweep."""
    worst = 0.0
    cases = 100
    for case in range(cases):
        width = int(rng.integers(1, 9))
        labels = int(rng.integers(2, 5))
        spec = random_spec(rng, case, labels, 1, width)
        g = UnaryVolume(rng.normal(size=(1, width, labels)))
        b, _ = sgm(g, spec, workers=workers)
        _, tape = sweep_bp_forward(g, spec, workers=workers)
        deviation = float(np.max(np.abs(b - tape.a)))
        if deviation > 1e-12:
            raise CheckFailure(f"sgm case {case}: differs from the sweep by {deviation:.3e}")
        worst = max(worst, deviation)
    return SuiteReport("sgm", cases, worst)


@suite("normalization")
def normalization_suite(rng: np.random.Generator, workers: int) -> SuiteReport:
    """Message normalization leaves beliefs unchanged; runs are repeatable."""
    worst = 0.0
    cases = 20
    for case in range(cases):
        spec = random_spec(rng, case, 4, 5, 5)
        g = UnaryVolume(rng.normal(size=(5, 5, 4)) * 3.0)
        normalized, _ = sweep_bp_forward(g, spec, normalize=True, workers=workers)
        raw, _ = sweep_bp_forward(g, spec, normalize=False, workers=workers)
        deviation = float(np.max(np.abs(normalized.probs - raw.probs)))
        if deviation > 1e-9:
            raise CheckFailure(f"normalization case {case}: beliefs differ by {deviation:.3e}")
        again, _ = sweep_bp_forward(g, spec, normalize=True, workers=workers)
        if again.probs.tobytes() != normalized.probs.tobytes():
            raise CheckFailure(f"normalization case {case}: repeated run differs")
        worst = max(worst, deviation)
    return SuiteReport("normalization", cases, worst)


SEGMENTATION_DIAGONAL: float = 2.0


@suite("segmentation")
def segmentation_suite(rng: np.random.Generator, workers: int) -> SuiteReport:
    """A diagonal-dominant matrix removes at least 30% of label noise."""
    cases = 5
    worst = 0.0
    labels = 4
    matrix = SEGMENTATION_DIAGONAL * np.eye(labels)
    spec = FullMatrix(CompatMatrix(matrix, matrix))
    for case in range(cases):
        scene = segmentation_scene(32, 32, labels, seed=int(rng.integers(2**31)), noise=0.1)
        result = run_segmentation(scene.probs, spec, workers=workers)
        before = float(np.mean(scene.noisy != scene.truth))
        after = float(np.mean(result.values != scene.truth))
        if before > 0 and after > 0.7 * before:
            raise CheckFailure(
                f"segmentation case {case}: error {after:.3f} vs {before:.3f} before smoothing"
            )
        worst = max(worst, after / before if before else 0.0)
    return SuiteReport("segmentation", cases, worst)


@suite("ordering")
def ordering_suite(rng: np.random.Generator, workers: int) -> SuiteReport:
    """WTA, single-scale BP and multi-scale BP on noisy low-texture scenes, then training.

    bad1 is averaged over a few scenes. Training starts from a flat
    temperature and must halve the NLL of the finest level; coarse targets
    of odd disparities fall between two labels, so their NLL cannot halve.
    """
    params = ModelParams.default_jump(3)
    runs = (("wta", "wta", 1), ("bp", "bp", 1), ("bp+ms", "bp", 3))
    bad1 = {label: 0.0 for label, _, _ in runs}
    for _ in range(ORDERING_SCENES):
        scene = stereo_scene(
            64, 64, 15, seed=int(rng.integers(2**31)), noise=ORDERING_NOISE, blur=ORDERING_BLUR
        )
        for label, algo, levels in runs:
            cfg = TrainConfig(algo=algo, levels=levels, max_disp=15)
            result = run_stereo(scene.left, scene.right, params, cfg, workers)
            bad1[label] += metrics(result.values, scene.disparity)["bad1"] / ORDERING_SCENES
    log.info(f"Mean bad1 per algorithm: {bad1}")
    gaps = (bad1["wta"] - bad1["bp"], bad1["bp"] - bad1["bp+ms"])
    if min(gaps) < ORDERING_GAP:
        raise CheckFailure(f"ordering: expected wta > bp > bp+ms by 1 point each, got {bad1}")

    train_scene = stereo_scene(64, 64, 15, seed=int(rng.integers(2**31)), noise=TRAIN_NOISE)
    cfg = TrainConfig(steps=200, learning_rate=0.05, levels=3, max_disp=15)
    sample = stereo_sample(train_scene.left, train_scene.right, train_scene.disparity, cfg)
    start = ModelParams(TRAIN_START_TEMPERATURE, params.levels)
    trained, _ = train_toy([sample], start, cfg, workers)
    finest = cfg.levels - 1
    before = sample_loss(sample, start, cfg, workers).components[finest]
    after = sample_loss(sample, trained, cfg, workers).components[finest]
    log.info(f"Finest-level NLL {before:.4f} -> {after:.4f}")
    if after > 0.5 * before:
        raise CheckFailure(f"ordering: finest-level NLL went from {before:.4f} to {after:.4f}")
    return SuiteReport("ordering", 3 * ORDERING_SCENES + 1, after / before)
