"""Exact distortion/perception analysis of tiny discrete sources in noise.

The model: a discrete scalar source X is observed through independent
additive discrete noise, X' = X + N. An encoder is a deterministic map from
the support of X' onto at most M codewords; decoders may be deterministic
(the conditional mean, which minimizes mean squared error) or stochastic
(required to reproduce the source distribution exactly, the
"perfect perception" regime). Everything is small enough to enumerate, so
all quantities below are computed exactly up to float64 rounding:

* ``posterior_denoise``: the posterior mean E[X | X'], the best possible
  noise reduction under squared error.
* ``mmse_codec``: exhaustive search for the encoders minimizing mean squared
  error with conditional-mean decoding.
* ``mse_decomposition``: E||X - X_mse||^2 splits exactly into the denoising
  error E||X - E[X|X']||^2 plus the codec error E||E[X|X'] - X_mse||^2
  (the cross term vanishes because the noise is independent of the source).
* ``perception_opt_distortion``: with the encoder fixed, the least distortion
  any decoder can achieve while matching the source distribution exactly is
  E[Var(X | Z)] plus the squared 2-Wasserstein distance between the law of
  the conditional means and the source law, realized by the monotone
  (quantile) coupling.
* ``posterior_sampling_check``: the decoder that samples from p(X | X_mse)
  matches the source distribution exactly and attains twice the MSE.
* ``verify_encoder_transfer``: every MSE-optimal encoder is also optimal
  under the perfect-perception constraint (argmin-set inclusion), checked
  per instance by exhaustive search.

Rate is modeled operationally as a codeword budget (|Z| <= M) rather than a
mutual-information constraint; encoders are deterministic maps and all
stochasticity lives in the decoders.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_TIE_TOL = 1e-12
DEFAULT_RESIDUAL_TOL = 1e-9
MAX_ENCODERS = 1_000_000
_MERGE_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite scalar distribution with distinct values, stored sorted."""

    values: tuple[float, ...]
    pmf: tuple[float, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if values.ndim != 1 or values.size < 1 or values.shape != pmf.shape:
            raise ValueError("values and pmf must be matching non-empty 1-D sequences")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
            raise ValueError("pmf entries must be >= 0 and sum to 1 within 1e-12")
        if np.unique(values).size != values.size:
            raise ValueError("values must be distinct")
        order = np.argsort(values)
        object.__setattr__(self, "values", tuple(float(v) for v in values[order]))
        object.__setattr__(self, "pmf", tuple(float(p) for p in pmf[order]))

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.pmf))


DiscreteSource = DiscreteDistribution
AdditiveNoise = DiscreteDistribution


def _merge_sums(sums: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct sums and the index of each input sum in that support."""
    order = np.argsort(sums)
    merged = [sums[order[0]]]
    index = np.empty(sums.size, dtype=np.intp)
    index[order[0]] = 0
    for pos in order[1:]:
        if sums[pos] - merged[-1] > _MERGE_TOL * max(1.0, abs(merged[-1])):
            merged.append(sums[pos])
        index[pos] = len(merged) - 1
    return np.asarray(merged), index


@dataclass(frozen=True)
class RDPInstance:
    """A source, independent additive noise, and a codeword budget M."""

    source: DiscreteDistribution
    noise: DiscreteDistribution
    codewords: int

    def __post_init__(self):
        if self.codewords < 1:
            raise ValueError("codeword budget must be >= 1")
        if len(self.observation_values) > 16:
            raise ValueError("observation support larger than 16 points")
        if self.codewords > len(self.observation_values):
            raise ValueError("codeword budget exceeds the observation support size")

    @property
    def _chain(self):
        """(source values, source pmf, observation values, joint) cached."""
        cached = self.__dict__.get("_chain_cache")
        if cached is None:
            x = np.asarray(self.source.values)
            px = np.asarray(self.source.pmf)
            nv = np.asarray(self.noise.values)
            pn = np.asarray(self.noise.pmf)
            sums = (x[:, None] + nv[None, :]).reshape(-1)
            obs_values, idx = _merge_sums(sums)
            joint = np.zeros((x.size, obs_values.size))
            mass = (px[:, None] * pn[None, :]).reshape(-1)
            np.add.at(joint, (np.repeat(np.arange(x.size), nv.size), idx), mass)
            cached = (x, px, obs_values, joint)
            object.__setattr__(self, "_chain_cache", cached)
        return cached

    @property
    def observation_values(self) -> np.ndarray:
        return self._chain[2]

    @property
    def joint(self) -> np.ndarray:
        """P(X = x_i, X' = o_j) as an (|X|, |support(X')|) matrix."""
        return self._chain[3]

    @property
    def observation_pmf(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    def describe(self) -> dict:
        return {
            "source_values": list(self.source.values),
            "source_pmf": list(self.source.pmf),
            "noise_values": list(self.noise.values),
            "noise_pmf": list(self.noise.pmf),
            "codewords": self.codewords,
        }


@dataclass
class DenoiseResult:
    """Posterior of X given each observation value, and its mean."""

    observation_values: np.ndarray
    observation_pmf: np.ndarray
    posterior: np.ndarray  # (n_obs, n_source)
    posterior_mean: np.ndarray

    def as_mapping(self) -> dict[float, float]:
        return {float(o): float(m) for o, m in zip(self.observation_values, self.posterior_mean)}


def posterior_denoise(inst: RDPInstance) -> DenoiseResult:
    """Bayes posterior over the source for every observation value."""
    x, _, obs, joint = inst._chain
    obs_pmf = joint.sum(axis=0)
    posterior = (joint / obs_pmf[None, :]).T
    return DenoiseResult(obs, obs_pmf, posterior, posterior @ x)


def denoise_error(inst: RDPInstance) -> float:
    """E||X - E[X|X']||^2, the irreducible error of optimal noise reduction."""
    x, _, obs, joint = inst._chain
    mean = posterior_denoise(inst).posterior_mean
    return float(np.einsum("ij,ij->", joint, (x[:, None] - mean[None, :]) ** 2))


def enumerate_encoders(inst: RDPInstance) -> np.ndarray:
    """All deterministic maps from the observation support to codewords, as
    an (n_encoders, n_obs) integer matrix."""
    n_obs = len(inst.observation_values)
    count = inst.codewords**n_obs
    if count > MAX_ENCODERS:
        raise ValueError(f"{count} encoders exceed the exhaustive-search limit {MAX_ENCODERS}")
    return np.asarray(
        list(itertools.product(range(inst.codewords), repeat=n_obs)), dtype=np.intp
    )


@dataclass
class EncoderEnsemble:
    """Exhaustive per-encoder statistics for one instance."""

    encoders: np.ndarray          # (E, n_obs)
    codeword_pmf: np.ndarray      # (E, M)
    codeword_means: np.ndarray    # (E, M), conditional means E[X | Z]
    mmse_distortion: np.ndarray   # (E,)


def encoder_ensemble(inst: RDPInstance) -> EncoderEnsemble:
    x, _, obs, joint = inst._chain
    enc = enumerate_encoders(inst)
    onehot = enc[:, :, None] == np.arange(inst.codewords)[None, None, :]
    p_z = np.einsum("j,ejm->em", joint.sum(axis=0), onehot)
    mass_x = np.einsum("ij,ejm->eim", joint, onehot)
    sum_x = np.einsum("i,eim->em", x, mass_x)
    with np.errstate(invalid="ignore", divide="ignore"):
        m_z = np.where(p_z > 0, sum_x / np.where(p_z > 0, p_z, 1.0), 0.0)
    m_per_obs = np.take_along_axis(m_z, enc, axis=1)
    dist = np.einsum("ij,eij->e", joint, (x[None, :, None] - m_per_obs[:, None, :]) ** 2)
    return EncoderEnsemble(enc, p_z, m_z, dist)


def conditional_means(inst: RDPInstance, encoder) -> tuple[np.ndarray, np.ndarray]:
    """(p_z, E[X | Z = z]) for a single encoder map."""
    x, _, obs, joint = inst._chain
    e = np.asarray(encoder, dtype=np.intp)
    if e.shape != (len(obs),):
        raise ValueError("encoder must assign a codeword to every observation value")
    if e.min() < 0 or e.max() >= inst.codewords:
        raise ValueError("encoder uses a codeword outside the budget")
    p_z = np.zeros(inst.codewords)
    np.add.at(p_z, e, joint.sum(axis=0))
    sum_x = np.zeros(inst.codewords)
    np.add.at(sum_x, e, joint.T @ x)
    with np.errstate(invalid="ignore", divide="ignore"):
        m_z = np.where(p_z > 0, sum_x / np.where(p_z > 0, p_z, 1.0), 0.0)
    return p_z, m_z


def mmse_distortion(inst: RDPInstance, encoder) -> float:
    """E||X - m_Z||^2 for a single encoder with conditional-mean decoding."""
    x, _, obs, joint = inst._chain
    e = np.asarray(encoder, dtype=np.intp)
    _, m_z = conditional_means(inst, encoder)
    return float(np.einsum("ij,ij->", joint, (x[:, None] - m_z[e][None, :]) ** 2))


@dataclass
class MmseCodecResult:
    optimal_encoders: list[tuple[int, ...]]
    distortion: float
    ensemble: EncoderEnsemble


def mmse_codec(inst: RDPInstance, tie_tol: float = DEFAULT_TIE_TOL) -> MmseCodecResult:
    """All encoders attaining the minimum MSE (within tie_tol), by exhaustion."""
    ens = encoder_ensemble(inst)
    best = ens.mmse_distortion.min()
    optimal = [tuple(int(v) for v in ens.encoders[i])
               for i in np.flatnonzero(ens.mmse_distortion <= best + tie_tol)]
    return MmseCodecResult(optimal, float(best), ens)


@dataclass
class DecompositionCheck:
    lhs: float
    rhs: float
    residual: float


def mse_decomposition(inst: RDPInstance, encoder, fault_bias: float = 0.0) -> DecompositionCheck:
    """Check E||X - X_mse||^2 = E||X - E[X|X']||^2 + E||E[X|X'] - X_mse||^2.

    ``fault_bias`` deliberately perturbs the left-hand side; it exists so the
    report pipeline's failure path can be exercised.
    """
    e = np.asarray(encoder, dtype=np.intp)
    _, m_z = conditional_means(inst, encoder)
    den = posterior_denoise(inst)
    lhs = mmse_distortion(inst, encoder) + fault_bias
    codec_term = float(np.dot(den.observation_pmf, (den.posterior_mean - m_z[e]) ** 2))
    rhs = denoise_error(inst) + codec_term
    return DecompositionCheck(lhs, rhs, abs(lhs - rhs))


def monotone_coupling(a_values, a_pmf, b_values, b_pmf) -> tuple[list[tuple[int, int, float]], float]:
    """Quantile coupling of two sorted discrete scalar distributions.

    Returns (rows, cost): rows are (index_a, index_b, mass) triples and cost
    is the squared-distance transport cost, which for the monotone coupling
    equals the squared 2-Wasserstein distance.
    """
    a_values = np.asarray(a_values, dtype=np.float64)
    b_values = np.asarray(b_values, dtype=np.float64)
    if np.any(np.diff(a_values) < 0) or np.any(np.diff(b_values) < 0):
        raise ValueError("values must be sorted ascending")
    ra = list(np.asarray(a_pmf, dtype=np.float64))
    rb = list(np.asarray(b_pmf, dtype=np.float64))
    rows: list[tuple[int, int, float]] = []
    cost = 0.0
    i = j = 0
    while i < len(ra) and j < len(rb):
        mass = min(ra[i], rb[j])
        if mass > 0:
            rows.append((i, j, mass))
            cost += mass * (a_values[i] - b_values[j]) ** 2
        ra[i] -= mass
        rb[j] -= mass
        if ra[i] <= 1e-15:
            i += 1
        if j < len(rb) and rb[j] <= 1e-15:
            j += 1
    return rows, float(cost)


@dataclass
class PerceptionOptimum:
    """Least distortion under an exact output-distribution match."""

    distortion: float
    conditional_variance_term: float
    transport_cost: float
    decoder: dict[int, np.ndarray]  # codeword -> pmf over source values
    output_pmf: np.ndarray


def perception_opt_distortion(inst: RDPInstance, encoder) -> PerceptionOptimum:
    """Optimal stochastic decoding with the encoder fixed and the output law
    constrained to equal the source law exactly.

    The distortion decomposes as E[Var(X|Z)] plus the cost of transporting
    the law of the conditional means onto the source law; in one dimension
    the optimal transport is the monotone coupling.
    """
    x, px, obs, joint = inst._chain
    p_z, m_z = conditional_means(inst, encoder)
    cond_var_term = mmse_distortion(inst, encoder)
    used = np.flatnonzero(p_z > 0)
    order = used[np.argsort(m_z[used], kind="stable")]
    rows, cost = monotone_coupling(m_z[order], p_z[order], x, px)
    decoder = {int(z): np.zeros(x.size) for z in used}
    for ai, bj, mass in rows:
        z = int(order[ai])
        decoder[z][bj] += mass / p_z[z]
    output = np.zeros(x.size)
    for z in used:
        output += p_z[z] * decoder[int(z)]
    return PerceptionOptimum(cond_var_term + cost, cond_var_term, cost, decoder, output)


@dataclass
class PosteriorSamplingCheck:
    """Decoder sampling from p(X | X_mse): distribution-exact, distortion 2*MSE."""

    distortion: float
    marginal_residual: float
    joint_residual: float
    gap_to_perception_optimum: float


def posterior_sampling_check(inst: RDPInstance, encoder) -> PosteriorSamplingCheck:
    x, px, obs, joint = inst._chain
    e = np.asarray(encoder, dtype=np.intp)
    p_z, m_z = conditional_means(inst, encoder)
    mse = mmse_distortion(inst, encoder)
    # Joint law of (X, X_mse): pool codewords whose conditional means coincide.
    used = np.flatnonzero(p_z > 0)
    mse_values = sorted(set(float(m_z[z]) for z in used))
    val_index = {v: k for k, v in enumerate(mse_values)}
    joint_x_mse = np.zeros((x.size, len(mse_values)))
    for j in range(len(obs)):
        joint_x_mse[:, val_index[float(m_z[e[j]])]] += joint[:, j]
    p_mse = joint_x_mse.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = joint_x_mse / np.where(p_mse > 0, p_mse, 1.0)[None, :]
    sampled_joint = cond * p_mse[None, :]
    joint_residual = float(np.max(np.abs(sampled_joint - joint_x_mse)))
    marginal_residual = float(np.max(np.abs(sampled_joint.sum(axis=1) - px)))
    d_ps = 2.0 * mse
    d_0 = perception_opt_distortion(inst, encoder).distortion
    return PosteriorSamplingCheck(d_ps, marginal_residual, joint_residual, d_ps - d_0)


def encoder_partition(inst: RDPInstance, encoder) -> tuple[tuple[float, ...], ...]:
    """Canonical partition of the observation support induced by an encoder."""
    obs = inst.observation_values
    cells: dict[int, list[float]] = {}
    for j, z in enumerate(np.asarray(encoder, dtype=np.intp)):
        cells.setdefault(int(z), []).append(float(obs[j]))
    return tuple(sorted(tuple(sorted(c)) for c in cells.values()))


@dataclass
class EncoderTransferReport:
    """Does MSE optimality transfer to the perfect-perception criterion?"""

    holds: bool
    mmse_optimal: list[tuple[int, ...]]
    perception_optimal: list[tuple[int, ...]]
    min_mmse_distortion: float
    min_perception_distortion: float
    mmse_distortions: np.ndarray
    perception_distortions: np.ndarray
    ensemble: EncoderEnsemble


def verify_encoder_transfer(inst: RDPInstance, tie_tol: float = DEFAULT_TIE_TOL) -> EncoderTransferReport:
    """Exhaustively check that every MSE-optimal encoder is also optimal under
    the exact-distribution-match constraint (argmin-set inclusion)."""
    ens = encoder_ensemble(inst)
    d_perf = np.empty(len(ens.encoders))
    for i, enc in enumerate(ens.encoders):
        d_perf[i] = perception_opt_distortion(inst, enc).distortion
    d_mmse = ens.mmse_distortion
    a_inf = np.flatnonzero(d_mmse <= d_mmse.min() + tie_tol)
    a_zero = np.flatnonzero(d_perf <= d_perf.min() + tie_tol)
    holds = set(a_inf.tolist()) <= set(a_zero.tolist())
    to_tuples = lambda idx: [tuple(int(v) for v in ens.encoders[i]) for i in idx]
    return EncoderTransferReport(
        holds=bool(holds),
        mmse_optimal=to_tuples(a_inf),
        perception_optimal=to_tuples(a_zero),
        min_mmse_distortion=float(d_mmse.min()),
        min_perception_distortion=float(d_perf.min()),
        mmse_distortions=d_mmse,
        perception_distortions=d_perf,
        ensemble=ens,
    )


_VALUE_SETS = {1: (0.0,), 2: (-1.0, 1.0), 3: (-1.0, 0.0, 1.0)}


def _pmf_grid(size: int, step: float):
    units = round(1.0 / step)
    if abs(units * step - 1.0) > 1e-12:
        raise ValueError("pmf step must divide 1 exactly")
    for cuts in itertools.combinations(range(1, units), size - 1):
        bounds = (0,) + cuts + (units,)
        yield tuple((bounds[i + 1] - bounds[i]) * step for i in range(size))


def default_instance_grid(max_source_size: int = 3, max_noise_size: int = 3,
                          max_codewords: int = 3, pmf_step: float = 0.25,
                          value_scale: float = 1.0) -> list[RDPInstance]:
    """Every instance with source/noise supports drawn from the scaled
    {-1, 0, 1} value sets, pmfs on the positive pmf_step simplex grid, and
    codeword budgets up to max_codewords (capped by the support size)."""
    if not (1 <= max_source_size <= 3 and 1 <= max_noise_size <= 3):
        raise ValueError("source/noise sizes up to 3 are supported by the default value sets")
    def dists(max_size):
        out = []
        for k in range(1, max_size + 1):
            values = tuple(v * value_scale for v in _VALUE_SETS[k])
            out.extend(DiscreteDistribution(values, pmf) for pmf in _pmf_grid(k, pmf_step))
        return out
    instances = []
    for src, nse in itertools.product(dists(max_source_size), dists(max_noise_size)):
        support = len(RDPInstance(src, nse, 1).observation_values)
        for m in range(1, min(max_codewords, support) + 1):
            instances.append(RDPInstance(src, nse, m))
    return instances


@dataclass
class SweepRecord:
    instance: dict
    transfer_holds: bool
    mmse_distortion: float
    perception_distortion: float
    posterior_sampling_distortion: float
    max_decomposition_residual: float
    max_endpoint_violation: float
    mmse_optimal_partitions: list
    passed: bool

    def to_json(self) -> dict:
        return {
            "instance": self.instance,
            "transfer_holds": self.transfer_holds,
            "mmse_distortion": self.mmse_distortion,
            "perception_distortion": self.perception_distortion,
            "posterior_sampling_distortion": self.posterior_sampling_distortion,
            "max_decomposition_residual": self.max_decomposition_residual,
            "max_endpoint_violation": self.max_endpoint_violation,
            "mmse_optimal_partitions": self.mmse_optimal_partitions,
            "passed": self.passed,
        }


@dataclass
class SweepResult:
    records: list[SweepRecord]
    all_passed: bool


def decomposition_residuals(inst: RDPInstance, ensemble: EncoderEnsemble | None = None,
                            fault_bias: float = 0.0) -> np.ndarray:
    """|lhs - rhs| of the MSE decomposition for every enumerated encoder."""
    ens = ensemble or encoder_ensemble(inst)
    den = posterior_denoise(inst)
    m_per_obs = np.take_along_axis(ens.codeword_means, ens.encoders, axis=1)
    codec_terms = np.einsum("j,ej->e", den.observation_pmf,
                            (den.posterior_mean[None, :] - m_per_obs) ** 2)
    return np.abs(ens.mmse_distortion + fault_bias - (denoise_error(inst) + codec_terms))


def run_verification_sweep(instances, tie_tol: float = DEFAULT_TIE_TOL,
                           residual_tol: float = DEFAULT_RESIDUAL_TOL,
                           fault_bias: float = 0.0) -> SweepResult:
    """Run the optimality-transfer, decomposition, and perception-endpoint
    checks over a collection of instances."""
    records = []
    for inst in instances:
        report = verify_encoder_transfer(inst, tie_tol)
        max_residual = float(
            decomposition_residuals(inst, report.ensemble, fault_bias).max()
        )
        endpoint_violation = 0.0
        for enc in report.mmse_optimal:
            d_inf = mmse_distortion(inst, enc)
            d_0 = perception_opt_distortion(inst, enc).distortion
            ps = posterior_sampling_check(inst, enc)
            endpoint_violation = max(
                endpoint_violation,
                d_inf - d_0,
                d_0 - ps.distortion,
                abs(ps.distortion - 2.0 * d_inf),
                ps.marginal_residual,
                ps.joint_residual,
            )
        passed = (
            report.holds
            and max_residual <= residual_tol
            and endpoint_violation <= residual_tol
        )
        partitions = sorted(set(encoder_partition(inst, e) for e in report.mmse_optimal))
        records.append(
            SweepRecord(
                instance=inst.describe(),
                transfer_holds=report.holds,
                mmse_distortion=report.min_mmse_distortion,
                perception_distortion=report.min_perception_distortion,
                posterior_sampling_distortion=2.0 * report.min_mmse_distortion,
                max_decomposition_residual=max_residual,
                max_endpoint_violation=float(endpoint_violation),
                mmse_optimal_partitions=[[list(cell) for cell in p] for p in partitions],
                passed=passed,
            )
        )
    return SweepResult(records, all(r.passed for r in records))


def load_instances(path) -> list[RDPInstance]:
    """Read instances from a JSON file: {"instances": [{source_values,
    source_pmf, noise_values, noise_pmf, codewords}, ...]}."""
    payload = json.loads(Path(path).read_text())
    instances = []
    for rec in payload["instances"]:
        instances.append(
            RDPInstance(
                DiscreteDistribution(tuple(rec["source_values"]), tuple(rec["source_pmf"])),
                DiscreteDistribution(tuple(rec["noise_values"]), tuple(rec["noise_pmf"])),
                int(rec["codewords"]),
            )
        )
    return instances


def write_report(result: SweepResult, path) -> None:
    payload = {
        "all_passed": result.all_passed,
        "num_instances": len(result.records),
        "instances": [r.to_json() for r in result.records],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def format_summary(result: SweepResult) -> str:
    lines = []
    failures = [r for r in result.records if not r.passed]
    lines.append(f"instances={len(result.records)} failures={len(failures)}")
    for r in result.records:
        lines.append(
            "instance src={sv} noise={nv} M={m}: mmse={d1:.6f} perception={d2:.6f} "
            "posterior_sampling={d3:.6f} transfer={ok} residual={res:.2e} {status}".format(
                sv=r.instance["source_values"],
                nv=r.instance["noise_values"],
                m=r.instance["codewords"],
                d1=r.mmse_distortion,
                d2=r.perception_distortion,
                d3=r.posterior_sampling_distortion,
                ok=r.transfer_holds,
                res=r.max_decomposition_residual,
                status="ok" if r.passed else "FAILED",
            )
        )
    return "\n".join(lines)
