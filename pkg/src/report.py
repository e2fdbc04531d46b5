from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
import json
import logging
import time
from typing import Any, Dict, List, Mapping, Optional, Tuple

import pandas as pd
import psutil

from config_loader import config_hash, config_to_dict, parse_config
from custom_types import (
    ClassCounts, CostBreakdown, EventFlag, EventKind, ExclusionReason, ExclusionStage, ExclusionTag,
    LedgerContext, MatchEvent, MetricsSummary, Role, RunManifest, VerdictLedger,
)
from utils import TOOL_VERSION, UNDEFINED, sha256_text
from verdict import SweepResult

logger: logging.Logger = logging.getLogger(__name__)

REPORT_KEYS = ("config", "events", "exclusions", "annex", "summary", "per_threshold", "context")

EVENT_COLUMNS = ["timestamp", "kind", "sut_id", "res_id", "sut_class", "res_class",
                 "geometric", "total", "flags", "res_occlusion", "delay_s", "detail"]


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

def _ratio(value: Optional[float]) -> Any:
    return UNDEFINED if value is None else value


def _unratio(value: Any) -> Optional[float]:
    return None if value == UNDEFINED or value is None else float(value)


def cost_to_dict(cost: Optional[CostBreakdown]) -> Optional[Dict[str, Any]]:
    """Cost breakdown as a record; a gated total is written as null."""
    if cost is None:
        return None
    return {
        "geometric": cost.geometric,
        "penalties": dict(sorted(cost.penalties.items())),
        "gated": cost.gated,
        "total": None if cost.gated else cost.total,
    }


def event_to_dict(e: MatchEvent) -> Dict[str, Any]:
    return {
        "timestamp": e.timestamp,
        "kind": e.kind.value,
        "sut_id": e.sut_id,
        "res_id": e.res_id,
        "cost": cost_to_dict(e.cost),
        "flags": sorted(f.value for f in e.flags),
        "prev_sut_id": e.prev_sut_id,
        "sut_class": e.sut_class,
        "res_class": e.res_class,
        "res_occlusion": e.res_occlusion,
        "delay_s": e.delay_s,
        "detail": e.detail,
    }


def event_from_dict(d: Mapping[str, Any]) -> MatchEvent:
    cost = None
    if d.get("cost") is not None:
        c = d["cost"]
        cost = CostBreakdown.build(float(c["geometric"]), c["penalties"], bool(c["gated"]))
    return MatchEvent(
        timestamp=float(d["timestamp"]),
        kind=EventKind(d["kind"]),
        sut_id=d.get("sut_id"),
        res_id=d.get("res_id"),
        cost=cost,
        flags=frozenset(EventFlag(f) for f in d.get("flags", [])),
        prev_sut_id=d.get("prev_sut_id"),
        sut_class=d.get("sut_class"),
        res_class=d.get("res_class"),
        res_occlusion=d.get("res_occlusion"),
        delay_s=d.get("delay_s"),
        detail=d.get("detail", ""),
    )


def exclusion_to_dict(tag: ExclusionTag) -> Dict[str, Any]:
    return {
        "reason": tag.reason.value,
        "stage": tag.stage.value,
        "section": tag.section,
        "role": tag.role.value,
        "track_id": tag.track_id,
        "timestamp": tag.timestamp,
        "class_label": tag.class_label,
        "x": tag.x,
        "y": tag.y,
        "detail": tag.detail,
    }


def exclusion_from_dict(d: Mapping[str, Any]) -> ExclusionTag:
    return ExclusionTag(
        reason=ExclusionReason(d["reason"]),
        stage=ExclusionStage(d["stage"]),
        role=Role(d["role"]),
        track_id=d["track_id"],
        timestamp=float(d["timestamp"]),
        class_label=d.get("class_label", ""),
        x=float(d.get("x", 0.0)),
        y=float(d.get("y", 0.0)),
        detail=d.get("detail", ""),
    )


def context_to_dict(ctx: LedgerContext) -> Dict[str, Any]:
    doc = asdict(ctx)
    doc["notes"] = list(ctx.notes)
    doc["res_track_starts"] = dict(sorted(ctx.res_track_starts.items()))
    return doc


def context_from_dict(d: Mapping[str, Any]) -> LedgerContext:
    return LedgerContext(
        sut_input=int(d["sut_input"]),
        res_input=int(d["res_input"]),
        frame_period_s=float(d["frame_period_s"]),
        res_track_starts={k: float(v) for k, v in d.get("res_track_starts", {}).items()},
        basis=d.get("basis", "acquisition"),
        tool_version=d.get("tool_version", ""),
        notes=tuple(d.get("notes", [])),
    )


def summary_to_dict(summary: MetricsSummary) -> Dict[str, Any]:
    """Summary record; undefined ratios and durations are the string "undefined"."""
    return {
        "tp": summary.tp,
        "fp": summary.fp,
        "fn": summary.fn,
        "fn_latency": summary.fn_latency,
        "id_switches": summary.id_switches,
        "gap_forgiven": summary.gap_forgiven,
        "precision": _ratio(summary.precision),
        "recall": _ratio(summary.recall),
        "tid_s": _ratio(summary.tid_s),
        "lgd_s": _ratio(summary.lgd_s),
        "mean_tp_delay_s": _ratio(summary.mean_tp_delay_s),
        "excluded": summary.excluded,
        "per_class": {
            cls: {"tp": c.tp, "fp": c.fp, "fn": c.fn,
                  "precision": _ratio(c.precision), "recall": _ratio(c.recall)}
            for cls, c in sorted(summary.per_class.items())
        },
        "visibility": {k: dict(sorted(v.items())) for k, v in sorted(summary.visibility.items())},
        "annex": dict(sorted(summary.annex.items())),
    }


def summary_from_dict(d: Mapping[str, Any]) -> MetricsSummary:
    return MetricsSummary(
        tp=int(d["tp"]), fp=int(d["fp"]), fn=int(d["fn"]),
        fn_latency=int(d.get("fn_latency", 0)),
        id_switches=int(d["id_switches"]),
        gap_forgiven=int(d["gap_forgiven"]),
        precision=_unratio(d["precision"]),
        recall=_unratio(d["recall"]),
        tid_s=_unratio(d["tid_s"]),
        lgd_s=_unratio(d["lgd_s"]),
        mean_tp_delay_s=_unratio(d["mean_tp_delay_s"]),
        excluded=int(d["excluded"]),
        per_class={
            cls: ClassCounts(tp=c["tp"], fp=c["fp"], fn=c["fn"],
                             precision=_unratio(c["precision"]), recall=_unratio(c["recall"]))
            for cls, c in d.get("per_class", {}).items()
        },
        visibility={k: dict(v) for k, v in d.get("visibility", {}).items()},
        annex=dict(d.get("annex", {})),
    )


def sweep_rows(sweep: SweepResult) -> List[Dict[str, Any]]:
    """One flat row per threshold."""
    rows = []
    for tau, s in zip(sweep.taus, sweep.summaries):
        rows.append({"tau": tau, "tp": s.tp, "fp": s.fp, "fn": s.fn,
                     "precision": _ratio(s.precision), "recall": _ratio(s.recall)})
    return rows


# ---------------------------------------------------------------------------
# Report documents
# ---------------------------------------------------------------------------

def report_to_dict(ledger: VerdictLedger, summary: MetricsSummary,
                   sweep: Optional[SweepResult] = None) -> Dict[str, Any]:
    summary_doc = summary_to_dict(summary)
    if sweep is not None:
        summary_doc["sweep_mean_precision"] = _ratio(sweep.mean_precision)
        summary_doc["sweep_mean_recall"] = _ratio(sweep.mean_recall)
    return {
        "config": config_to_dict(ledger.config_echo),
        "events": [event_to_dict(e) for e in ledger.events],
        "exclusions": [exclusion_to_dict(t) for t in ledger.exclusions],
        "annex": [event_to_dict(e) for e in ledger.annex],
        "summary": summary_doc,
        "per_threshold": [] if sweep is None else sweep_rows(sweep),
        "context": context_to_dict(ledger.context),
    }


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return UNDEFINED if value is None else f"{value:.{digits}f}"


def events_frame(ledger: VerdictLedger) -> pd.DataFrame:
    """The event table, one row per verdict, in ledger order."""
    rows = []
    for e in ledger.events:
        rows.append({
            "timestamp": e.timestamp,
            "kind": e.kind.value,
            "sut_id": e.sut_id or "",
            "res_id": e.res_id or "",
            "sut_class": e.sut_class or "",
            "res_class": e.res_class or "",
            "geometric": None if e.cost is None else e.cost.geometric,
            "total": None if e.cost is None or e.cost.gated else e.cost.total,
            "flags": ";".join(sorted(f.value for f in e.flags)),
            "res_occlusion": e.res_occlusion,
            "delay_s": e.delay_s,
            "detail": e.detail,
        })
    return pd.DataFrame(rows, columns=EVENT_COLUMNS)


def _human(ledger: VerdictLedger, summary: MetricsSummary, sweep: Optional[SweepResult]) -> str:
    cfg = ledger.config_echo
    out: List[str] = [f"Oracle report: {cfg.name or '(unnamed config)'}  [tool {ledger.context.tool_version}]", ""]

    headline = pd.DataFrame([
        ("TP", str(summary.tp)), ("FP", str(summary.fp)), ("FN", str(summary.fn)),
        ("FN (latency)", str(summary.fn_latency)), ("ID switches", str(summary.id_switches)),
        ("gap forgiven", str(summary.gap_forgiven)), ("excluded", str(summary.excluded)),
        ("precision", _fmt(summary.precision)), ("recall", _fmt(summary.recall)),
        ("TID [s]", _fmt(summary.tid_s)), ("LGD [s]", _fmt(summary.lgd_s)),
        ("mean TP delay [s]", _fmt(summary.mean_tp_delay_s)),
    ], columns=["metric", "value"])
    out += ["Summary", headline.to_string(index=False), ""]

    if summary.per_class:
        per_class = pd.DataFrame([
            (cls, c.tp, c.fp, c.fn, _fmt(c.precision), _fmt(c.recall))
            for cls, c in sorted(summary.per_class.items())
        ], columns=["class", "tp", "fp", "fn", "precision", "recall"])
        out += ["Per class", per_class.to_string(index=False), ""]

    if summary.visibility:
        vis = pd.DataFrame([(b, c["tp"], c["fn"]) for b, c in summary.visibility.items()],
                           columns=["visibility", "tp", "fn"])
        out += ["Visibility", vis.to_string(index=False), ""]

    if sweep is not None:
        table = pd.DataFrame([(f"{r['tau']:.4f}", r["tp"], r["fp"], r["fn"],
                               _fmt(s.precision), _fmt(s.recall))
                              for r, s in zip(sweep_rows(sweep), sweep.summaries)],
                             columns=["tau", "tp", "fp", "fn", "precision", "recall"])
        out += ["Threshold sweep", table.to_string(index=False),
                f"mean precision {_fmt(sweep.mean_precision)}, mean recall {_fmt(sweep.mean_recall)}", ""]

    if ledger.events:
        events = pd.DataFrame([
            (f"{e.timestamp:.3f}", e.kind.value, e.sut_id or "-", e.res_id or "-",
             "-" if e.cost is None else ("gated" if e.cost.gated else f"{e.cost.total:.3f}"),
             ",".join(sorted(f.value for f in e.flags)) or "-")
            for e in ledger.events
        ], columns=["t", "kind", "sut", "res", "cost", "flags"])
        out += ["Events", events.to_string(index=False), ""]

    if ledger.exclusions:
        excl = pd.DataFrame([
            (f"{t.timestamp:.3f}", t.role.value, t.track_id, t.reason.value, t.stage.value, t.detail)
            for t in ledger.exclusions
        ], columns=["t", "role", "id", "reason", "stage", "detail"])
        out += ["Exclusions", excl.to_string(index=False), ""]

    if ledger.annex:
        out += [f"Unreliable-region annex: {summary.annex}", ""]
    for note in ledger.context.notes + cfg.notes:
        out.append(f"note: {note}")
    return "\n".join(out).rstrip() + "\n"


def emit_report(ledger: VerdictLedger, summary: MetricsSummary, fmt: str = "structured",
                sweep: Optional[SweepResult] = None) -> str:
    """
    Renders the report as text. "structured" is indented JSON with sorted keys,
    "human" a set of tables. Both are byte-for-byte deterministic.
    """
    if fmt == "structured":
        return json.dumps(report_to_dict(ledger, summary, sweep), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if fmt == "human":
        return _human(ledger, summary, sweep)
    raise ValueError(f"Unknown report format '{fmt}'. Expected 'structured' or 'human'.")


def write_report(text: str, output_path: Path) -> None:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with output_path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    logger.info("Report written to %s", output_path)


def ledger_from_dict(doc: Mapping[str, Any]) -> VerdictLedger:
    missing = [k for k in REPORT_KEYS if k not in doc]
    if missing:
        raise ValueError(f"Report is missing top-level keys: {', '.join(missing)}")
    return VerdictLedger(
        events=tuple(event_from_dict(e) for e in doc["events"]),
        exclusions=tuple(exclusion_from_dict(t) for t in doc["exclusions"]),
        config_echo=parse_config(doc["config"]),
        annex=tuple(event_from_dict(e) for e in doc["annex"]),
        context=context_from_dict(doc["context"]),
    )


def read_report(report_path: Path) -> Tuple[VerdictLedger, Dict[str, Any]]:
    """
    Reads a structured report back into a ledger plus the raw document.

    Raises FileNotFoundError if the report does not exist.
    """
    if not report_path.exists():
        raise FileNotFoundError(f"Report not found: {report_path}")
    with report_path.open(encoding="utf-8") as f:
        doc = json.load(f)
    return ledger_from_dict(doc), doc


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def write_events_csv(ledger: VerdictLedger, output_path: Path) -> None:
    """Writes the event table as CSV."""
    output_path.parent.mkdir(parents=True, exist_ok=True)
    events_frame(ledger).to_csv(output_path, index=False)
    logger.info("Event table written to %s (%d rows)", output_path, len(ledger.events))


def write_sweep_csv(sweep: SweepResult, output_path: Path) -> None:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(sweep_rows(sweep), columns=["tau", "tp", "fp", "fn", "precision", "recall"]).to_csv(
        output_path, index=False)


def read_events_csv(csv_path: Path) -> pd.DataFrame:
    """Loads an event table written by write_events_csv."""
    if not csv_path.exists():
        raise FileNotFoundError(f"CSV file not found: {csv_path}")
    df = pd.read_csv(csv_path, keep_default_na=False, na_values=[""])
    logger.debug("Loaded %d event rows from %s", len(df), csv_path)
    return df


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

class RunClock:
    """Wall-clock, CPU and memory figures of the current process between start() and stop()."""

    def __init__(self) -> None:
        self._process = psutil.Process()
        self.started_at = ""
        self._t0 = 0.0
        self._cpu0 = 0.0
        self.peak_rss = 0

    def _cpu(self) -> float:
        times = self._process.cpu_times()
        return float(times.user + times.system)

    def _sample_rss(self) -> None:
        self.peak_rss = max(self.peak_rss, int(self._process.memory_info().rss))

    def start(self) -> "RunClock":
        self.started_at = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        self._t0 = time.perf_counter()
        self._cpu0 = self._cpu()
        self._sample_rss()
        return self

    def stop(self) -> Tuple[float, float, float]:
        """(wall clock s, cpu s, peak rss MB)."""
        self._sample_rss()
        return time.perf_counter() - self._t0, self._cpu() - self._cpu0, self.peak_rss / (1024.0 * 1024.0)


def build_manifest(
    ledger: VerdictLedger,
    input_paths: Mapping[str, Path],
    config_path: Optional[Path],
    report_text: str,
    clock: RunClock,
) -> RunManifest:
    wall, cpu, rss = clock.stop()
    return RunManifest(
        input_paths={role: str(p) for role, p in sorted(input_paths.items())},
        config_path=None if config_path is None else str(config_path),
        config_hash=config_hash(ledger.config_echo),
        tool_version=TOOL_VERSION,
        wall_clock_s=wall,
        cpu_time_s=cpu,
        memory_peak_mb=rss,
        started_at=clock.started_at,
        report_sha256=sha256_text(report_text),
    )


def manifest_path_for(report_path: Path) -> Path:
    return report_path.with_name(report_path.name + ".manifest.json")


def write_manifest(manifest: RunManifest, report_path: Path, ledger: Optional[VerdictLedger] = None) -> Path:
    """
    Writes the manifest next to *report_path*. The reference-system documentation
    of the config travels with it when *ledger* is given.
    """
    doc: Dict[str, Any] = asdict(manifest)
    if ledger is not None:
        echo = config_to_dict(ledger.config_echo)
        doc["res_hardware"] = echo["res_hardware"]
        doc["labeling_meta"] = echo["labeling_meta"]
    path = manifest_path_for(report_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    logger.debug("Manifest written to %s", path)
    return path
