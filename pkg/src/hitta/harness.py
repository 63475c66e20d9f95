"""Streaming evaluation engine, reporting, and overlay export.

A stream is an ordered walk over target-domain samples. For each sample the
chosen method runs its per-sample procedure (statistics re-estimation,
pre-inference adaptation, dual-head presentation, oracle correction,
post-inference adaptation — whichever ingredients the method enables), and
the engine records the presented mask's DSC against both the source rater R1
and the domain's own rater. Model state carries forward along the stream, so
what is measured is the model adapting *while* being used, not a frozen
snapshot.

`StreamRunner` is the single implementation of that per-sample procedure.
`run_stream` drives it with the built-in oracle annotator; the HTTP service
drives the same class with a live reviewer — keeping the two paths
numerically identical by construction.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import SegNetwork, load_checkpoint, param_fingerprint
from .config import RunConfig, canonical_json, save_config_snapshot
from .datagen import Sample, SyntheticDataset, normalize
from .errors import ConfigError, NumericError, ValidationError
from .feedback_adapt import (
    PreferenceHead,
    head_forward,
    init_head,
    post_inference_adapt,
    select_mask,
    validate_correction,
)
from .methods import MethodSpec, resolve_method, stage_configs
from .objectives import argmax_mask, dsc
from .oracle import correct
from .pre_adapt import pre_inference_adapt
from .rle import decode_mask, encode_mask

REPORT_DSC_DECIMALS = 6  # fixed table precision: determinism is checked at this grain


# -- stream construction ---------------------------------------------------------


@dataclass
class StreamItem:
    """One position in the evaluation stream (sample loaded lazily)."""

    index: int
    record: dict
    domain: str
    rater: str


def build_stream(
    dataset: SyntheticDataset,
    domains: list[str] | None,
    seed: int,
    limit: int | None = None,
    split: str = "test",
) -> list[StreamItem]:
    """Order samples domain-by-domain with a seeded shuffle inside each domain.

    The true acquisition order of a clinical stream is unknowable here, so
    the order is an explicit function of the seed and is recorded with every
    report.
    """
    domains = list(domains) if domains else dataset.target_domains
    known = {d.name for d in dataset.domains}
    missing = [d for d in domains if d not in known]
    if missing:
        raise ConfigError(f"domains {missing} not in dataset (has {sorted(known)})")
    items: list[StreamItem] = []
    for d_idx, domain in enumerate(domains):
        records = dataset.records(domain, split=split)
        if not records:
            raise ConfigError(f"domain {domain!r} has no '{split}' samples")
        order = np.random.default_rng(np.random.SeedSequence([seed, d_idx])).permutation(len(records))
        chosen = [records[i] for i in order]
        if limit is not None:
            chosen = chosen[:limit]
        rater = dataset.rater_assignment[domain]
        for rec in chosen:
            items.append(StreamItem(len(items), rec, domain, rater))
    return items


def sample_rngs(seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """The two per-sample random streams (pre stage, feedback stage).

    Derivation depends only on (run seed, stream position), so any driver of
    the loop — harness or service — draws identical augmentations.
    """
    pre_ss, post_ss = np.random.SeedSequence([seed, index]).spawn(2)
    return np.random.default_rng(pre_ss), np.random.default_rng(post_ss)


# -- report types ----------------------------------------------------------------


@dataclass
class SampleRow:
    """Per-sample result; everything aggregates are built from."""

    index: int
    sample_id: str
    domain: str
    rater: str
    chosen_head: str
    failed: bool
    dsc_r1_od: float
    dsc_r1_oc: float
    dsc_r1: float
    dsc_rx_od: float
    dsc_rx_oc: float
    dsc_rx: float
    mdiv_mean: float | None
    mask: dict | None = None  # run-length encoding of the evaluated mask

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_json(data: dict) -> "SampleRow":
        return SampleRow(**data)


def _mean(values: list[float]) -> float:
    # 0.0 (with n=0 alongside) keeps empty aggregates JSON-representable
    return float(np.mean(values)) if values else 0.0


@dataclass
class StreamReport:
    """Everything one stream produced, reproducible from (config, seed, checkpoint)."""

    method: str
    seed: int
    config_fingerprint: str
    domains: list[str]
    rows: list[SampleRow] = field(default_factory=list)
    traces: dict[str, list[float]] = field(default_factory=dict)  # sample id -> pre-stage loss trace

    def aggregate(self) -> dict:
        """Per-domain and overall mean DSC, recomputed from the rows."""
        out: dict = {"overall": self._agg(self.rows), "per_domain": {}}
        for domain in self.domains:
            rows = [r for r in self.rows if r.domain == domain]
            out["per_domain"][domain] = self._agg(rows)
        return out

    @staticmethod
    def _agg(rows: list[SampleRow]) -> dict:
        return {
            "n": len(rows),
            "vs_r1_od": _mean([r.dsc_r1_od for r in rows]),
            "vs_r1_oc": _mean([r.dsc_r1_oc for r in rows]),
            "vs_r1": _mean([r.dsc_r1 for r in rows]),
            "vs_rstar_od": _mean([r.dsc_rx_od for r in rows]),
            "vs_rstar_oc": _mean([r.dsc_rx_oc for r in rows]),
            "vs_rstar": _mean([r.dsc_rx for r in rows]),
        }

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "domains": self.domains,
            "rows": [r.to_json() for r in self.rows],
            "traces": self.traces,
            "aggregate": self.aggregate(),
        }

    @staticmethod
    def from_json(data: dict) -> "StreamReport":
        return StreamReport(
            method=data["method"],
            seed=data["seed"],
            config_fingerprint=data["config_fingerprint"],
            domains=list(data["domains"]),
            rows=[SampleRow.from_json(r) for r in data["rows"]],
            traces={k: list(v) for k, v in data.get("traces", {}).items()},
        )


def compare_reports(a: StreamReport, b: StreamReport, tol: float = 1e-9) -> list[str]:
    """Differences between two reports' per-sample DSC values (empty = equal)."""
    problems = []
    if len(a.rows) != len(b.rows):
        return [f"row count differs: {len(a.rows)} vs {len(b.rows)}"]
    for ra, rb in zip(a.rows, b.rows):
        if ra.sample_id != rb.sample_id:
            problems.append(f"row {ra.index}: sample {ra.sample_id} vs {rb.sample_id}")
            continue
        for name in ("dsc_r1_od", "dsc_r1_oc", "dsc_r1", "dsc_rx_od", "dsc_rx_oc", "dsc_rx"):
            va, vb = getattr(ra, name), getattr(rb, name)
            if abs(va - vb) > tol:
                problems.append(f"{ra.sample_id}.{name}: {va!r} vs {vb!r}")
    return problems


# -- the per-sample engine ---------------------------------------------------------


@dataclass
class PredictionBundle:
    """What presenting one sample produced; held until feedback arrives."""

    index: int
    sample: Sample
    domain: str
    rater: str
    masks: dict[str, np.ndarray]        # "main" always, "pref" when a head exists
    mdiv_mean: float | None
    mdiv_max: float | None
    loss_trace: list[float]
    failed: bool
    post_rng: np.random.Generator


class StreamRunner:
    """Owns the evolving model state and steps through the stream.

    One runner = one stream = one adaptation episode; the class is not
    thread-safe and must be driven predict_next → commit_feedback per sample.
    """

    def __init__(
        self,
        method: str | MethodSpec,
        run: RunConfig,
        dataset: SyntheticDataset | None = None,
        stream: list[StreamItem] | None = None,
    ):
        self.spec = resolve_method(method) if isinstance(method, str) else method
        self.run = run
        self.dataset = dataset or SyntheticDataset(run.dataset_root)
        self.stream = stream if stream is not None else build_stream(
            self.dataset, run.domains, run.seed, run.limit
        )
        self.pre_cfg, self.post_cfg = stage_configs(self.spec, run)
        self.net, self.meta = load_checkpoint(run.checkpoint)
        self.head: PreferenceHead | None = None
        self.cursor = 0
        self.rows: list[SampleRow] = []
        self.traces: dict[str, list[float]] = {}
        self.records: list[dict] = []
        self.pending: PredictionBundle | None = None
        self._domain_of_last: str | None = None

    # -- state -------------------------------------------------------------------

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.stream)

    def _ensure_head(self) -> PreferenceHead:
        if self.head is None:
            self.head = init_head(
                self.net.feature_channels, self.net.arch.num_classes, seed=self.run.seed
            )
        return self.head

    def _maybe_reset_for(self, domain: str) -> None:
        if (
            self.run.reset_per_domain
            and self._domain_of_last is not None
            and domain != self._domain_of_last
        ):
            self.net, self.meta = load_checkpoint(self.run.checkpoint)
            self.head = None
        self._domain_of_last = domain

    # -- the two half-steps --------------------------------------------------------

    def predict_next(self) -> PredictionBundle | None:
        """Run the method's presentation path on the next sample (None = done)."""
        if self.pending is not None:
            raise ConfigError("previous sample still awaits feedback")
        if self.exhausted:
            return None
        item = self.stream[self.cursor]
        self._maybe_reset_for(item.domain)
        sample = self.dataset.load(item.record)
        pre_rng, post_rng = sample_rngs(self.run.seed, item.index)

        failed = False
        trace: list[float] = []
        mdiv_mean = mdiv_max = None
        if self.spec.batch_stats:
            try:
                self.net, res = pre_inference_adapt(self.net, sample.image, self.pre_cfg, pre_rng)
                probs, f_seg = res.probs, res.f_seg
                trace = res.loss_trace
                mdiv_mean, mdiv_max = float(res.mdiv.mean()), float(res.mdiv.max())
            except NumericError:
                failed = True
                probs, f_seg = self._plain_forward(sample)
        else:
            probs, f_seg = self._plain_forward(sample)

        masks = {"main": argmax_mask(probs)}
        if self.spec.feedback:
            head = self._ensure_head()
            with torch.no_grad():
                masks["pref"] = argmax_mask(head_forward(head, f_seg, probs))

        self.pending = PredictionBundle(
            index=item.index,
            sample=sample,
            domain=item.domain,
            rater=item.rater,
            masks=masks,
            mdiv_mean=mdiv_mean,
            mdiv_max=mdiv_max,
            loss_trace=trace,
            failed=failed,
            post_rng=post_rng,
        )
        return self.pending

    def _plain_forward(self, sample: Sample) -> tuple[torch.Tensor, torch.Tensor]:
        """Source model as-is: stored statistics, single image, no updates."""
        self.net.set_bn_mode("eval")
        with torch.no_grad():
            out = self.net(torch.from_numpy(normalize(sample.image)[None]))
        return out.probs[0], out.f_seg[0]

    def oracle_choice(self, bundle: PredictionBundle) -> tuple[np.ndarray, str]:
        """Resolve the configured selection policy with the domain rater as reference."""
        return select_mask(
            bundle.masks["main"],
            bundle.masks.get("pref"),
            self.run.selection_policy,
            bundle.sample.rater_masks[bundle.rater],
        )

    def commit_feedback(self, corrected: np.ndarray | None, chosen_head: str) -> SampleRow:
        """Score the chosen mask, fold the correction in, and advance the cursor."""
        bundle = self.pending
        if bundle is None:
            raise ConfigError("no sample awaiting feedback")
        if chosen_head not in bundle.masks:
            raise ValidationError(f"chosen head {chosen_head!r} not among {sorted(bundle.masks)}")
        chosen_mask = bundle.masks[chosen_head]
        failed = bundle.failed

        if self.spec.feedback and corrected is not None and not bundle.failed:
            corrected = validate_correction(corrected, self.net.arch.num_classes)
            if corrected.shape != chosen_mask.shape:
                raise ValidationError(
                    f"corrected mask {corrected.shape} vs sample {chosen_mask.shape}"
                )
            presented = {tag: encode_mask(m) for tag, m in bundle.masks.items()}
            self.net, _, record = post_inference_adapt(
                self.net,
                self._ensure_head(),
                bundle.sample.image,
                corrected,
                self.post_cfg,
                bundle.post_rng,
                sample_id=bundle.sample.sample_id,
                presented=presented,
                chosen_head=chosen_head,
            )
            self.records.append(record.to_json())
            failed = failed or record.failed

        r1 = dsc(chosen_mask, bundle.sample.rater_masks["R1"])
        rx = dsc(chosen_mask, bundle.sample.rater_masks[bundle.rater])
        row = SampleRow(
            index=bundle.index,
            sample_id=bundle.sample.sample_id,
            domain=bundle.domain,
            rater=bundle.rater,
            chosen_head=chosen_head,
            failed=failed,
            dsc_r1_od=r1.od,
            dsc_r1_oc=r1.oc,
            dsc_r1=r1.mean,
            dsc_rx_od=rx.od,
            dsc_rx_oc=rx.oc,
            dsc_rx=rx.mean,
            mdiv_mean=bundle.mdiv_mean,
            mask=encode_mask(chosen_mask),
        )
        self.rows.append(row)
        if bundle.loss_trace:
            self.traces[bundle.sample.sample_id] = bundle.loss_trace
        self.cursor += 1
        self.pending = None
        return row

    def report(self) -> StreamReport:
        return StreamReport(
            method=self.spec.name,
            seed=self.run.seed,
            config_fingerprint=self.run.fingerprint(),
            domains=list(self.run.domains or self.dataset.target_domains),
            rows=list(self.rows),
            traces=dict(self.traces),
        )

    def fingerprints(self) -> dict[str, str]:
        out = {which: param_fingerprint(self.net, which) for which in
               ("all", "bn_affine", "non_bn_affine", "buffers")}
        if self.head is not None:
            out["head"] = param_fingerprint(self.head)
        return out


# -- drivers ----------------------------------------------------------------------


def run_stream(
    method: str | MethodSpec,
    run: RunConfig,
    dataset: SyntheticDataset | None = None,
    stream: list[StreamItem] | None = None,
) -> StreamReport:
    """Evaluate one method over the stream with the oracle annotator in the loop."""
    runner = StreamRunner(method, run, dataset=dataset, stream=stream)
    while True:
        bundle = runner.predict_next()
        if bundle is None:
            break
        chosen_mask, tag = runner.oracle_choice(bundle)
        corrected = None
        if runner.spec.feedback:
            reference = bundle.sample.rater_masks[bundle.rater]
            corrected = correct(chosen_mask, reference, runner.run.correction)
        runner.commit_feedback(corrected, tag)
    return runner.report()


def run_matrix(run: RunConfig, log=print) -> dict:
    """Run every configured method over the stream and write the report bundle.

    Returns {"reports": {method: StreamReport}, "out_dir": Path}. The table
    files (comma-separated, structured-text, human summary) are written with
    fixed float precision so reruns with the same config and seeds are
    byte-identical; wall-clock timings go to the log only.
    """
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config_snapshot(run, out_dir / "config.yaml")
    dataset = SyntheticDataset(run.dataset_root)
    reports: dict[str, StreamReport] = {}
    for method in run.methods:
        t0 = time.perf_counter()
        report = run_stream(method, run, dataset=dataset)
        reports[method] = report
        (out_dir / f"report_{method}.json").write_text(canonical_json(report.to_json()))
        log(f"[matrix] {method}: {len(report.rows)} samples in {time.perf_counter() - t0:.1f}s")
    write_tables(reports, run, out_dir)
    return {"reports": reports, "out_dir": out_dir}


def _fmt(value: float) -> str:
    return f"{value:.{REPORT_DSC_DECIMALS}f}"


def write_tables(reports: dict[str, StreamReport], run: RunConfig, out_dir: Path) -> None:
    """Emit matrix.csv, matrix.json, and summary.txt from the per-method reports."""
    out_dir = Path(out_dir)
    table: dict[str, dict] = {}
    for method, report in reports.items():
        agg = report.aggregate()
        table[method] = {
            "overall": {k: (v if k == "n" else _fmt(v)) for k, v in agg["overall"].items()},
            "per_domain": {
                d: {k: (v if k == "n" else _fmt(v)) for k, v in cell.items()}
                for d, cell in agg["per_domain"].items()
            },
        }
    payload = {
        "seed": run.seed,
        "config_fingerprint": run.fingerprint(),
        "dsc_scale": "fractions in [0, 1]",
        "methods": table,
    }
    (out_dir / "matrix.json").write_text(canonical_json(payload))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["method", "domain", "n", "vs_r1_od", "vs_r1_oc", "vs_r1",
         "vs_rstar_od", "vs_rstar_oc", "vs_rstar"]
    )
    for method in sorted(reports):
        agg = reports[method].aggregate()
        cells = list(agg["per_domain"].items()) + [("overall", agg["overall"])]
        for domain, cell in cells:
            writer.writerow(
                [method, domain, cell["n"]]
                + [_fmt(cell[k]) for k in
                   ("vs_r1_od", "vs_r1_oc", "vs_r1", "vs_rstar_od", "vs_rstar_oc", "vs_rstar")]
            )
    (out_dir / "matrix.csv").write_text(buf.getvalue())

    lines = [
        "Mean DSC (x100), presented mask vs source rater R1 and vs the domain rater R*",
        f"seed={run.seed} config={run.fingerprint()}",
        "",
        f"{'method':<22}{'domain':<10}{'n':>4}{'vs R1':>9}{'vs R*':>9}",
    ]
    for method in sorted(reports):
        agg = reports[method].aggregate()
        for domain, cell in list(agg["per_domain"].items()) + [("overall", agg["overall"])]:
            lines.append(
                f"{method:<22}{domain:<10}{cell['n']:>4}"
                f"{cell['vs_r1'] * 100:>9.2f}{cell['vs_rstar'] * 100:>9.2f}"
            )
        lines.append("")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")


# -- overlays ---------------------------------------------------------------------

_CONTOUR_COLORS = {
    # structure -> (prediction, R1 reference, domain-rater reference)
    "od": ((255, 214, 0), (0, 230, 118), (41, 121, 255)),
    "oc": ((255, 82, 82), (0, 150, 136), (224, 64, 251)),
}


def _contour(mask_bool: np.ndarray) -> np.ndarray:
    """Boundary pixels: set pixels with at least one 4-neighbor outside the set."""
    from scipy.ndimage import binary_erosion

    if not mask_bool.any():
        return np.zeros_like(mask_bool)
    return mask_bool & ~binary_erosion(mask_bool, border_value=0)


def render_overlay(sample: Sample, prediction: np.ndarray, rater: str) -> np.ndarray:
    """(H, W, 3) uint8: the image with prediction and both references as contours."""
    img = (np.clip(sample.image, 0.0, 1.0).transpose(1, 2, 0) * 255).astype(np.uint8).copy()
    layers = [prediction, sample.rater_masks["R1"], sample.rater_masks[rater]]
    for s_idx, structure in enumerate(("od", "oc")):
        threshold = 1 if structure == "od" else 2
        for l_idx, mask in enumerate(layers):
            edge = _contour(np.asarray(mask) >= threshold)
            img[edge] = _CONTOUR_COLORS[structure][l_idx]
    return img


def export_overlays(
    dataset: SyntheticDataset, report: StreamReport, out_dir: str | Path, limit: int | None = None
) -> list[Path]:
    """One lossless overlay image per report row (prediction + both references)."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_id = {r["id"]: r for r in dataset.manifest["samples"]}
    written = []
    for row in report.rows[: limit if limit is not None else len(report.rows)]:
        if row.mask is None:
            continue
        sample = dataset.load(by_id[row.sample_id])
        art = render_overlay(sample, decode_mask(row.mask), row.rater)
        path = out_dir / f"{row.sample_id}_{report.method}.png"
        Image.fromarray(art).save(path, format="PNG")
        written.append(path)
    return written
