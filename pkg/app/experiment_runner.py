"""
Experiment Runner

This module contains the controller that coordinates the backend engines for
one experiment run: it dispatches the experiment, collects its reports and
writes the run artifacts.
"""

import math
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from backend import annulus_laws as laws
from backend.csbp_engine import (
    CsbpTask,
    StableSampler,
    TailTask,
    damped_identity,
    empirical_log_laplace,
    psi,
    sample_extinction_time,
    simulate_levy_exit,
)
from backend.enumeration import EnumCache
from backend.peeling_engine import (
    ExplorationTask,
    estimate_hit_prob,
    height_integral_residual,
)
from backend.peeling_kernels import KernelTable, VolumeSampler
from backend.replicate_pool import derive_seed, map_replicates, replicate_rng
from backend.report_logger import ReportLogger
from backend.stat_checks import (
    SummaryReport,
    binomial_se,
    chisq_threshold,
    chisq_vs_density,
    fit_power_law,
    ks_critical_value,
    ks_statistic,
    mean_ci,
    median_ci,
    ratio_ci,
    wilson_ci,
)

from .experiment_config import ExperimentConfig

# Enhanced imports with fallbacks
try:
    from loguru import logger

    ENHANCED_LOGGING = True
except ImportError:
    import logging

    logger = logging.getLogger(__name__)
    ENHANCED_LOGGING = False


EXACT_TOLERANCE = 1e-8
STOCHASTIC_TOLERANCE = 1e-9
Z2_AGREEMENT = 1e-4
CEMETERY_TOLERANCE = 0.05
Z_THRESHOLD = 3.0
EXACT_Z_THRESHOLD = 4.0
LENGTH_TOLERANCE = 0.02
TAIL_TOLERANCE = 0.30
OCCUPATION_TOLERANCE = 0.02
LAPLACE_TOLERANCE = 0.01
LAPLACE_DRAWS = 40_000_000
LEVY_START = 0.36
TAIL_CHUNK = 10_000


class ExperimentRunner:
    """
    Controller for one experiment run.

    This class is responsible for:
    - Dispatching the configured experiment to the backend engines
    - Turning simulation output into SummaryReports
    - Writing summary JSON and CSV artifacts through a ReportLogger
    - Deriving the process exit status from the report verdicts
    """

    def __init__(self, config: ExperimentConfig):
        """
        Initialize the runner.

        Args:
            config: Validated experiment configuration
        """
        self.config = config
        self.config_echo = config.to_dict()
        self.report_logger = ReportLogger(config.output_dir, config.experiment, self.config_echo)
        self._experiments: Dict[str, Callable[[], None]] = {
            "verify-exact": self.run_verify_exact,
            "peel-hit": self.run_peel_hit,
            "peel-height": self.run_peel_height,
            "csbp-extinction": self.run_csbp_extinction,
            "csbp-length": self.run_csbp_length,
            "perimeter-law": self.run_perimeter_law,
            "occupation": self.run_occupation,
            "tail": self.run_tail,
        }

    def run(self) -> int:
        """
        Run the configured experiment and write its artifacts.

        Returns:
            int: 0 if no report failed and every artifact was written, 1 otherwise
        """
        sink = None
        if ENHANCED_LOGGING and self.report_logger.ensure_dir():
            sink = logger.add(
                self.report_logger.path_for("run.log"),
                rotation="1 MB",
                retention="10 days",
                level="INFO",
            )
        try:
            logger.info(f"Experiment {self.config.experiment} started (seed={self.config.seed})")
            self._experiments[self.config.experiment]()
            saved = self.report_logger.save_summary()
            stats = self.report_logger.get_stats()
            logger.info(
                f"Experiment {self.config.experiment} finished: "
                f"{stats['pass']} passed, {stats['fail']} failed, {stats['info']} informational"
            )
            return self.report_logger.exit_status() if saved else 1
        finally:
            if sink is not None:
                logger.remove(sink)

    # -- helpers ----------------------------------------------------------

    def _report(self, **kwargs) -> SummaryReport:
        report = SummaryReport(config=self.config_echo, **kwargs)
        self.report_logger.add_report(report)
        return report

    def _exact_report(
        self, report_id: str, error: float, threshold: float = EXACT_TOLERANCE, **details
    ) -> SummaryReport:
        return self._report(
            id=report_id,
            n=0,
            estimate=error,
            ci=(error, error),
            reference=0.0,
            statistic_name="abs_error",
            statistic=error,
            threshold=threshold,
            details=details,
        )

    def _proportion_report(
        self, report_id: str, successes: int, trials: int, reference: float,
        threshold: Optional[float] = Z_THRESHOLD, **details,
    ) -> SummaryReport:
        estimate = successes / trials
        se = binomial_se(reference, trials)
        return self._report(
            id=report_id,
            n=trials,
            estimate=estimate,
            ci=wilson_ci(successes, trials),
            reference=reference,
            statistic_name="z_score",
            statistic=abs(estimate - reference) / se if se > 0 else abs(estimate - reference),
            threshold=threshold,
            details=details,
        )

    def _relative_report(
        self, report_id: str, sample: Sequence[float], reference: float, threshold: float, **details
    ) -> SummaryReport:
        mean, low, high = mean_ci(sample)
        return self._report(
            id=report_id,
            n=len(sample),
            estimate=mean,
            ci=(low, high),
            reference=reference,
            statistic_name="relative_error",
            statistic=abs(mean - reference) / abs(reference),
            threshold=threshold,
            details=details,
        )

    def _csbp_summaries(self, task: CsbpTask):
        results = map_replicates(task, self.config.N, self.config.n_jobs)
        summaries = [summary for summary, _ in results]
        paths = [(summary.replicate, path) for summary, path in results if path is not None]
        censored = sum(1 for s in summaries if s.censored)
        if censored:
            logger.warning(f"{censored} of {len(summaries)} CSBP paths censored at horizon {task.horizon}")
        if paths:
            self.report_logger.export_paths(paths, stride=max(1, int(round(0.01 / task.dt))))
        return summaries, censored

    # -- verify-exact -----------------------------------------------------

    def run_verify_exact(self) -> None:
        """Scalar identities of the enumeration, the kernels and the laws; no randomness."""
        enum = EnumCache()

        errors = [abs(enum.z1_series(L, 1e-6) / enum.z1(L) - 1.0) for L in range(2, 31)]
        self._exact_report("verify-exact/z1-series", max(errors), threshold=1e-6, L_max=30)
        z1_one = (2.0 - math.sqrt(3.0)) / 4.0
        self._exact_report("verify-exact/z1-at-one", abs(enum.z1(1) - z1_one), z1_at_one=z1_one)

        uipt = KernelTable(None, 512, enum)
        row_errors = [abs(math.fsum(uipt.row(k).tolist()) - 1.0) for k in range(1, 501)]
        self._exact_report(
            "verify-exact/q-inf-stochastic", max(row_errors), threshold=STOCHASTIC_TOLERANCE, k_max=500
        )

        # harmonic rows must leave a nonnegative cemetery mass
        harmonic_errors, min_cemetery = [], 1.0
        for L in (1, 10, 100):
            table = KernelTable(L, 256, enum)
            for k in range(1, 201):
                total = math.fsum(table.row(k).tolist())
                min_cemetery = min(min_cemetery, 1.0 - total)
                harmonic_errors.append(abs(total + table.cemetery(k) - 1.0))
        self._exact_report(
            "verify-exact/h-transform",
            max(max(harmonic_errors), -min_cemetery),
            threshold=STOCHASTIC_TOLERANCE,
            min_cemetery=min_cemetery,
        )

        self._exact_report(
            "verify-exact/z2-ratio", self._z2_ratio_error(enum), threshold=Z2_AGREEMENT
        )

        reference = laws.cemetery_asymptote(1.0)
        for L in (100, 1000, 10_000):
            table = KernelTable(L, L, enum)
            scaled = L**1.5 * table.cemetery(L)
            self._report(
                id=f"verify-exact/cemetery-asymptote/L={L}",
                n=0,
                estimate=scaled,
                ci=(scaled, scaled),
                reference=reference,
                statistic_name="relative_error",
                statistic=abs(scaled / reference - 1.0),
                threshold=CEMETERY_TOLERANCE if L == 10_000 else None,
            )

        self._exact_report("verify-exact/hit-integral/a=1,b=1", laws.hit_prob_integral_check(1.0, 1.0))
        self._exact_report("verify-exact/hit-integral/a=2,b=5", laws.hit_prob_integral_check(2.0, 5.0))
        self._exact_report("verify-exact/convolution/a=1,y=1", laws.convolution_identity_check(1.0, 1.0))
        self._exact_report("verify-exact/convolution/a=4,y=1", laws.convolution_identity_check(4.0, 1.0))
        self._exact_report("verify-exact/normalization", laws.normalization_identity_check())
        self._exact_report(
            "verify-exact/scale-laplace",
            max(laws.scale_laplace_check(lam) for lam in (0.5, 1.0, 2.0)),
        )
        self._exact_report(
            "verify-exact/length-occupation",
            max(
                abs(laws.expected_length_integral(a, b) - laws.expected_length(a, b))
                for a, b in ((1.0, 1.0), (1.0, 2.0), (2.0, 1.0))
            ),
        )
        rng = np.random.default_rng(self.config.seed)
        grid = rng.uniform(0.1, 10.0, size=(50, 3))
        self._exact_report(
            "verify-exact/length-symmetry-scaling",
            max(
                max(
                    abs(laws.expected_length(a, b) - laws.expected_length(b, a)),
                    abs(laws.expected_length(c * a, c * b) - math.sqrt(c) * laws.expected_length(a, b)),
                )
                / laws.expected_length(a, b)
                for a, b, c in grid
            ),
            threshold=1e-12,
        )

    @staticmethod
    def _z2_ratio_error(enum: EnumCache) -> float:
        worst = 0.0
        for L in (1, 2, 5):
            table = KernelTable(L, 64, enum)
            for k in range(1, 6):
                for m in range(-1, k):
                    ratio = 2.0 * enum.z1(m + 1) * enum.z2_series(L, k - m) / enum.z2_series(L, k)
                    worst = max(worst, abs(table.q(k, m) - ratio))
        return worst

    # -- peeling ----------------------------------------------------------

    def run_peel_hit(self) -> None:
        """Hit frequency of floor(bL) from a disk of boundary floor(aL), for every L."""
        cfg = self.config
        reports: List[SummaryReport] = []
        for L in cfg.L_list:
            report = estimate_hit_prob(
                cfg.a, cfg.b, L, cfg.N,
                seed=derive_seed(cfg.seed, L),
                n_jobs=cfg.n_jobs,
                init_mode=cfg.init_mode,
                max_steps=cfg.max_steps,
                threshold=Z_THRESHOLD if L == max(cfg.L_list) else None,
                config=self.config_echo,
            )
            self.report_logger.add_report(report)
            reports.append(report)
            if report.n:
                details = report.details
                self._proportion_report(
                    f"peel-hit/exact/L={L}",
                    details["n_hit"],
                    report.n,
                    details["discrete_reference"],
                    threshold=EXACT_Z_THRESHOLD,
                )

        self._trend_report("peel-hit/trend", reports)
        self.report_logger.export_rows(
            "samples.csv",
            ["L", "disk_boundary", "target", "n_hit", "n_death", "n_budget"],
            [{k: r.details[k] for k in ("L", "disk_boundary", "target", "n_hit", "n_death", "n_budget")} for r in reports],
        )

    def _trend_report(self, report_id: str, reports: List[SummaryReport]) -> None:
        usable = [r for r in reports if r.n]
        if len(usable) < 2:
            return
        errors = [abs(r.estimate - r.reference) for r in usable]
        widths = [r.ci[1] - r.ci[0] for r in usable]
        # each error may exceed its predecessor by at most two CI widths
        excess = max(errors[i + 1] - errors[i] - 2.0 * widths[i + 1] for i in range(len(usable) - 1))
        self._report(
            id=report_id,
            n=sum(r.n for r in usable),
            estimate=errors[-1],
            ci=(errors[-1], errors[-1]),
            reference=0.0,
            statistic_name="error_increase_beyond_2ci",
            statistic=excess,
            threshold=0.0,
            details={"errors": errors, "ci_widths": widths},
        )

    def run_peel_height(self) -> None:
        """Height-integral residuals of explorations of disks with boundary L."""
        cfg = self.config
        medians = []
        rows = []
        export = []
        for L in cfg.L_list:
            capacity = max(64, int(math.ceil(cfg.capacity_factor * L)))
            task = ExplorationTask(
                kernel=KernelTable(L, capacity),
                targets=(capacity,),
                seed=derive_seed(cfg.seed, L),
                scale=L,
                max_steps=cfg.max_steps,
                init_mode=cfg.init_mode,
                vols=VolumeSampler(),
                stride=cfg.stride,
                keep_rows=cfg.export_limit if L == max(cfg.L_list) else 0,
            )
            traces = map_replicates(task, cfg.N, cfg.n_jobs)
            residuals = [height_integral_residual(tr) for tr in traces if tr.steps > 0]
            median, low, high = median_ci(residuals)
            medians.append(median)
            outcomes = [tr.outcome for tr in traces]
            self._report(
                id=f"peel-height/L={L}",
                n=len(residuals),
                estimate=median,
                ci=(low, high),
                reference=0.0,
                statistic_name="median_residual",
                statistic=median,
                threshold=None,
                details={
                    "capacity": capacity,
                    "n_death": outcomes.count("death"),
                    "n_hit": outcomes.count("hit"),
                    "n_budget": outcomes.count("budget"),
                    "mean_layers": float(np.mean([len(tr.layers) for tr in traces])),
                },
            )
            for tr in traces:
                scaled_death = None if tr.death_step is None else (tr.death_step - 1) / laws.time_scale(L)
                rows.append({
                    "L": L,
                    "replicate": tr.replicate,
                    "outcome": tr.outcome,
                    "steps": tr.steps,
                    "height": tr.final.height,
                    "max_perimeter": tr.max_perimeter,
                    "residual": height_integral_residual(tr) if tr.steps > 0 else "",
                    "death_time_rescaled": "" if scaled_death is None else scaled_death,
                })
            export.extend(tr for tr in traces if tr.rows)

        if len(medians) >= 2:
            ratio = medians[-1] / medians[0] if medians[0] > 0 else math.inf
            self._report(
                id="peel-height/trend",
                n=cfg.N,
                estimate=ratio,
                ci=(ratio, ratio),
                reference=None,
                statistic_name="median_ratio_last_first",
                statistic=ratio,
                threshold=1.0,
                details={"L_list": list(cfg.L_list), "medians": medians},
            )
        self.report_logger.export_rows(
            "samples.csv",
            ["L", "replicate", "outcome", "steps", "height", "max_perimeter", "residual", "death_time_rescaled"],
            rows,
        )
        if export:
            self.report_logger.export_traces(export)

    # -- csbp -------------------------------------------------------------

    def run_csbp_extinction(self) -> None:
        """Extinction-time law from fixed starts, and the stable increment calibration."""
        cfg = self.config
        rows = []
        for i, x in enumerate(cfg.x_list):
            task = CsbpTask(cfg.dt, cfg.horizon, derive_seed(cfg.seed, i), x=x, keep_paths=cfg.export_limit if i == 0 else 0)
            summaries, censored = self._csbp_summaries(task)
            times = np.sort([math.inf if s.censored else s.extinction_time for s in summaries])
            statistic = ks_statistic(times, lambda t, x=x: laws.extinction_cdf(x, t))
            self._report(
                id=f"csbp-extinction/x={x}",
                n=len(times),
                estimate=statistic,
                ci=(statistic, statistic),
                reference=0.0,
                statistic_name="ks",
                statistic=statistic,
                threshold=ks_critical_value(len(times)),
                details={"censored": censored},
            )
            exact = np.sort(sample_extinction_time(x, replicate_rng(cfg.seed, 1_000 + i), cfg.N))
            exact_statistic = ks_statistic(exact, lambda t, x=x: laws.extinction_cdf(x, t))
            self._report(
                id=f"csbp-extinction/exact-sampler/x={x}",
                n=cfg.N,
                estimate=exact_statistic,
                ci=(exact_statistic, exact_statistic),
                reference=0.0,
                statistic_name="ks",
                statistic=exact_statistic,
                threshold=ks_critical_value(cfg.N),
            )
            rows.extend({"x": x, "replicate": s.replicate, "extinction_time": "" if s.censored else s.extinction_time} for s in summaries)

        sampler = StableSampler()
        rng = replicate_rng(cfg.seed, 2_000)
        worst = 0.0
        for dt in (1e-2, 1e-1, 1.0):
            for lam in (0.5, 1.0, 2.0):
                observed = empirical_log_laplace(dt, lam, rng, LAPLACE_DRAWS, sampler) / dt
                worst = max(worst, abs(observed / psi(lam) - 1.0))
        self._report(
            id="csbp-extinction/stable-laplace",
            n=LAPLACE_DRAWS,
            estimate=worst,
            ci=(worst, worst),
            reference=0.0,
            statistic_name="max_relative_error",
            statistic=worst,
            threshold=LAPLACE_TOLERANCE,
        )
        self.report_logger.export_rows("samples.csv", ["x", "replicate", "extinction_time"], rows)

    def run_csbp_length(self) -> None:
        """Visit probability of b and the mean last passage at b given a visit."""
        cfg = self.config
        task = CsbpTask(cfg.dt, cfg.horizon, cfg.seed, a=cfg.a, b=cfg.b, keep_paths=cfg.export_limit)
        summaries, censored = self._csbp_summaries(task)
        visits = sum(1 for s in summaries if s.visits)
        self._proportion_report(
            "csbp-length/visit", visits, len(summaries), laws.hit_prob(cfg.a, cfg.b), censored=censored
        )
        # censored paths contribute their exact conditional moments past the horizon
        weights = [s.visit_weight for s in summaries]
        moments = [s.length_moment for s in summaries]
        if visits >= 2:
            reference = laws.expected_length(cfg.a, cfg.b)
            mean, low, high = ratio_ci(moments, weights)
            self._report(
                id="csbp-length/mean",
                n=visits,
                estimate=mean,
                ci=(low, high),
                reference=reference,
                statistic_name="relative_error",
                statistic=abs(mean - reference) / reference,
                threshold=LENGTH_TOLERANCE,
                details={"censored": censored, "visit_weight": float(sum(weights))},
            )

        exit_counts = simulate_levy_exit(
            LEVY_START, 1.0, cfg.dt / 10.0, cfg.N, replicate_rng(cfg.seed, 3_000)
        )
        resolved = exit_counts.n_below + exit_counts.n_above
        if resolved:
            self._proportion_report(
                "csbp-length/levy-never-hits",
                exit_counts.n_below,
                resolved,
                laws.levy_never_hits(LEVY_START, 1.0),
                unresolved=exit_counts.n_unresolved,
            )
        self.report_logger.export_rows(
            "samples.csv",
            ["replicate", "z0", "extinction_time", "visits", "last_passage", "visit_weight", "length_moment"],
            [
                {
                    "replicate": s.replicate,
                    "z0": s.z0,
                    "extinction_time": "" if s.censored else s.extinction_time,
                    "visits": int(bool(s.visits)),
                    "last_passage": "" if s.last_passage is None else s.last_passage,
                    "visit_weight": s.visit_weight,
                    "length_moment": s.length_moment,
                }
                for s in summaries
            ],
        )

    def run_perimeter_law(self) -> None:
        """Law of the path value at extinction_time - r against the hull perimeter density."""
        cfg = self.config
        task = CsbpTask(cfg.dt, cfg.horizon, cfg.seed, a=cfg.a, r=cfg.r, keep_paths=cfg.export_limit)
        summaries, censored = self._csbp_summaries(task)
        values = [s.perimeter_at_r for s in summaries if s.perimeter_at_r is not None]
        present = len(values) + censored
        self._proportion_report(
            "perimeter-law/mass",
            present,
            len(summaries),
            laws.perimeter_hull_mass(cfg.r, cfg.a),
            censored=censored,
        )
        if values:
            statistic, dof = chisq_vs_density(
                values, lambda y: laws.perimeter_hull_density(cfg.r, cfg.a, y), cfg.bins
            )
            self._report(
                id="perimeter-law/chisq",
                n=len(values),
                estimate=statistic,
                ci=(statistic, statistic),
                reference=float(dof),
                statistic_name="chisq",
                statistic=statistic,
                threshold=chisq_threshold(dof),
                details={"dof": dof},
            )
        self.report_logger.export_rows(
            "samples.csv",
            ["replicate", "z0", "extinction_time", "perimeter_at_r"],
            [
                {
                    "replicate": s.replicate,
                    "z0": s.z0,
                    "extinction_time": "" if s.censored else s.extinction_time,
                    "perimeter_at_r": "" if s.perimeter_at_r is None else s.perimeter_at_r,
                }
                for s in summaries
            ],
        )

    def run_occupation(self) -> None:
        """Occupation integral of y exp(-y) against its quadrature value."""
        cfg = self.config
        task = CsbpTask(cfg.dt, cfg.horizon, cfg.seed, a=cfg.a, occupation=damped_identity, keep_paths=cfg.export_limit)
        summaries, censored = self._csbp_summaries(task)
        values = [s.occupation for s in summaries if s.occupation is not None]
        self._relative_report(
            "occupation/y-exp-y",
            values,
            laws.occupation_expectation(damped_identity, cfg.a),
            OCCUPATION_TOLERANCE,
            censored=censored,
        )
        self.report_logger.export_rows(
            "samples.csv",
            ["replicate", "z0", "occupation"],
            [
                {"replicate": s.replicate, "z0": s.z0, "occupation": "" if s.occupation is None else s.occupation}
                for s in summaries
            ],
        )

    def run_tail(self) -> None:
        """u^2 P(annulus length > u) from exact one-time marginals."""
        cfg = self.config
        chunks = max(1, int(math.ceil(cfg.N / TAIL_CHUNK)))
        task = TailTask(cfg.a, cfg.b, list(cfg.u_grid), cfg.seed, chunk=TAIL_CHUNK)
        weights = np.concatenate(map_replicates(task, chunks, cfg.n_jobs), axis=1)
        hit = laws.hit_prob(cfg.a, cfg.b)
        target = 3.0 * (cfg.a + cfg.b)
        survival = []
        for j, u in enumerate(cfg.u_grid):
            scaled = weights[j] * u * u / hit
            mean, low, high = mean_ci(scaled)
            survival.append(mean / (u * u))
            self._report(
                id=f"tail/u={u}",
                n=weights.shape[1],
                estimate=mean,
                ci=(low, high),
                reference=target,
                statistic_name="relative_error",
                statistic=abs(mean / target - 1.0),
                threshold=TAIL_TOLERANCE,
            )
        if len(cfg.u_grid) >= 2:
            fit = fit_power_law(cfg.u_grid, survival)
            self._report(
                id="tail/exponent",
                n=weights.shape[1],
                estimate=fit.exponent,
                ci=(fit.exponent, fit.exponent),
                reference=-2.0,
                statistic_name="exponent",
                statistic=fit.exponent,
                threshold=None,
                details={"coefficient": fit.coefficient, "asymptote": target},
            )
        self.report_logger.export_rows(
            "samples.csv",
            ["u", "survival", "scaled"],
            [{"u": u, "survival": s, "scaled": s * u * u} for u, s in zip(cfg.u_grid, survival)],
        )
