"""Deterministic synthetic log corpus with injected fault bursts and exact
ground truth, sized so the diagnosis task is learnable at desk scale.

Layout: the line stream is organized in windows of ``window`` lines. A window
is either normal (background templates, occasional lone symptom lines) or
anomalous (a compact burst: symptom run, trigger lines, symptom run, embedded
in background). Bursts never straddle window boundaries, so a window is
anomalous exactly when it contains a labeled trigger line.

Learnability levers:
  * normal mode: trigger templates occur only inside bursts, while symptom
    templates also occur benignly (lone lines and trigger-free decoy runs),
    which lets ranking training suppress symptom positions;
  * hard mode: trigger templates additionally leak into the benign stream, so
    the template alone no longer identifies a fault line; only a trigger seen
    in symptom context does.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .parsing import WILDCARD

_WORDS = (
    "connection established daemon cache flush worker thread queue replica "
    "heartbeat session token buffer link interface packet route storage "
    "volume snapshot index shard lease timeout retry request response client "
    "server module kernel driver memory page pool scheduler task job stage "
    "commit transaction lock mutex socket stream channel broker topic offset "
    "segment compaction sync replication election leader follower quorum "
    "gossip probe health check metric gauge alert policy rule quota limit "
    "throttle backoff handshake certificate cipher auth registry mount "
    "cluster node agent proxy gateway listener dispatcher watchdog journal"
).split()


@dataclass
class FaultSpec:
    """One injectable fault: which templates signal it and how it bursts.

    A burst is a run of leading symptoms, then the labeled trigger lines,
    then a short symptom tail. The tail is kept short on purpose: every
    position after a trigger carries its memory through the recurrent state,
    and long tails hand the top rank to those echo positions instead of the
    trigger itself.
    """

    fault_type: str
    trigger_ids: list[int]
    symptom_ids: list[int]
    min_triggers: int = 2
    max_triggers: int = 4
    min_symptoms: int = 1
    max_symptoms: int = 3
    max_tail_symptoms: int = 1


@dataclass
class CorpusSpec:
    num_templates: int = 50
    num_lines: int = 40000
    seed: int = 7
    injection_rate: float = 0.05   # target fraction of lines that are root-cause lines
    window: int = 20
    hard_mode: bool = False
    num_fault_types: int = 2
    triggers_per_fault: int = 2
    symptoms_per_fault: int = 3
    symptom_decoy_rate: float = 0.04
    decoy_run_rate: float = 0.20    # fraction of normal windows carrying a trigger-free symptom run
    trigger_leak_rate: float = 0.02  # hard mode: benign lines drawn from trigger templates
    min_template_tokens: int = 5
    max_template_tokens: int = 9

    def validate(self) -> None:
        if self.num_lines < self.window:
            raise ValueError("num_lines must cover at least one window")
        if not 0.0 <= self.injection_rate < 1.0:
            raise ValueError("injection_rate must be in [0, 1)")
        special = self.num_fault_types * (self.triggers_per_fault + self.symptoms_per_fault)
        if self.num_templates < 2 * special:
            raise ValueError("num_templates must be at least twice the trigger+symptom count")


@dataclass
class CorpusManifest:
    """Exact ground truth for one generated corpus."""

    spec: dict
    templates: list[str]
    labeled_lines: list[int]
    faults: list[dict]
    num_windows: int
    num_anomalous_windows: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass
class CorpusArtifacts:
    log_path: Path
    label_path: Path
    manifest_path: Path
    manifest: CorpusManifest


def _similarity(a: list[str], b: list[str]) -> float:
    return sum(1 for x, y in zip(a, b) if x == y) / len(a)


def build_templates(spec: CorpusSpec, rng: np.random.Generator) -> list[list[str]]:
    """Synthesize masked template token lists, pairwise dissimilar enough that
    the parser recovers each one as a distinct template."""
    templates: list[list[str]] = []
    attempts = 0
    while len(templates) < spec.num_templates:
        attempts += 1
        if attempts > 200 * spec.num_templates:
            raise RuntimeError("could not synthesize dissimilar templates; widen settings")
        length = int(rng.integers(spec.min_template_tokens, spec.max_template_tokens + 1))
        tokens = [str(w) for w in rng.choice(_WORDS, size=length)]
        # parameter slots only after the leading tokens used for tree descent
        n_slots = int(rng.integers(1, 3))
        slot_positions = rng.choice(np.arange(2, length), size=min(n_slots, length - 2),
                                    replace=False)
        for pos in slot_positions:
            tokens[pos] = WILDCARD
        if any(len(t) == len(tokens) and _similarity(t, tokens) >= 0.5 for t in templates):
            continue
        templates.append(tokens)
    return templates


def _slot_value(rng: np.random.Generator) -> str:
    kind = int(rng.integers(0, 5))
    if kind == 0:
        return f"node-{rng.integers(0, 100)}"
    if kind == 1:
        return str(rng.integers(1, 65536))
    if kind == 2:
        return f"job_{rng.integers(0, 10000)}"
    if kind == 3:
        return f"0x{rng.integers(0, 16**6):06x}"
    return f"10.0.{rng.integers(0, 256)}.{rng.integers(0, 256)}"


def _render(template: list[str], rng: np.random.Generator) -> str:
    return " ".join(_slot_value(rng) if tok == WILDCARD else tok for tok in template)


def _timestamp(line_index: int) -> str:
    seconds, millis = divmod(line_index * 125, 1000)
    minutes, seconds = divmod(seconds, 60)
    hours, minutes = divmod(minutes, 60)
    return f"2026-01-01T{hours % 24:02d}:{minutes:02d}:{seconds:02d}.{millis:03d}"


def default_fault_specs(spec: CorpusSpec) -> tuple[list[FaultSpec], set[int], set[int]]:
    """Carve trigger/symptom template ids out of the catalog tail."""
    faults = []
    trigger_ids: set[int] = set()
    symptom_ids: set[int] = set()
    pool = list(range(spec.num_templates))
    for f in range(spec.num_fault_types):
        symptoms = [pool.pop() for _ in range(spec.symptoms_per_fault)]
        triggers = [pool.pop() for _ in range(spec.triggers_per_fault)]
        faults.append(FaultSpec(fault_type=f"fault_{f}", trigger_ids=triggers,
                                symptom_ids=symptoms))
        trigger_ids.update(triggers)
        symptom_ids.update(symptoms)
    return faults, trigger_ids, symptom_ids


def generate_corpus(spec: CorpusSpec, out_dir: str | Path) -> CorpusArtifacts:
    """Write corpus.log, labels.txt, and manifest.json under ``out_dir``.

    Equal specs (including seed) produce byte-identical outputs; the manifest
    records every injected fault with its exact trigger/symptom line numbers.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    templates = build_templates(spec, rng)
    all_ids = list(range(len(templates)))
    faults, trigger_ids, symptom_ids = default_fault_specs(spec)
    background_ids = [i for i in all_ids
                      if i not in symptom_ids and i not in trigger_ids]
    leak_pool = sorted(trigger_ids)
    symptom_pool = sorted(symptom_ids)

    num_windows = spec.num_lines // spec.window
    mean_triggers = (faults[0].min_triggers + faults[0].max_triggers) / 2.0
    anom_prob = min(spec.injection_rate * spec.window / mean_triggers, 0.5)

    # Deterministic coverage: the first background draws cycle through every
    # benign template once so parsing recovers the full catalog.
    coverage = [i for i in all_ids
                if i not in trigger_ids or spec.hard_mode]
    coverage_pos = 0

    def background_template() -> int:
        nonlocal coverage_pos
        if coverage_pos < len(coverage):
            tid = coverage[coverage_pos]
            coverage_pos += 1
            return tid
        if spec.hard_mode and rng.random() < spec.trigger_leak_rate:
            return int(rng.choice(leak_pool))
        if rng.random() < spec.symptom_decoy_rate:
            return int(rng.choice(symptom_pool))
        return int(rng.choice(background_ids))

    lines: list[str] = []
    labeled: list[int] = []
    fault_records: list[dict] = []
    anomalous_windows = 0

    for w in range(num_windows):
        base_line = w * spec.window + 1  # 1-based line numbers
        window_ids: list[int | None] = [None] * spec.window
        is_anomalous = rng.random() < anom_prob

        if is_anomalous:
            anomalous_windows += 1
            # cycle fault types once so every trigger template gets exercised
            if anomalous_windows <= len(faults):
                fault = faults[anomalous_windows - 1]
            else:
                fault = faults[int(rng.integers(0, len(faults)))]
            n_pre = int(rng.integers(fault.min_symptoms, fault.max_symptoms + 1))
            n_post = int(rng.integers(0, fault.max_tail_symptoms + 1))
            n_trig = int(rng.integers(fault.min_triggers, fault.max_triggers + 1))
            burst = (
                [int(rng.choice(fault.symptom_ids)) for _ in range(n_pre)]
                + [int(rng.choice(fault.trigger_ids)) for _ in range(n_trig)]
                + [int(rng.choice(fault.symptom_ids)) for _ in range(n_post)]
            )
            offset = int(rng.integers(0, spec.window - len(burst) + 1))
            window_ids[offset:offset + len(burst)] = burst
            trigger_lines = [base_line + offset + n_pre + i for i in range(n_trig)]
            symptom_lines = ([base_line + offset + i for i in range(n_pre)]
                             + [base_line + offset + n_pre + n_trig + i for i in range(n_post)])
            labeled.extend(trigger_lines)
            fault_records.append({
                "fault_type": fault.fault_type,
                "window_index": w,
                "trigger_lines": trigger_lines,
                "symptom_lines": symptom_lines,
            })
        elif rng.random() < spec.decoy_run_rate:
            fault = faults[int(rng.integers(0, len(faults)))]
            run_len = int(rng.integers(2, 6))
            offset = int(rng.integers(0, spec.window - run_len + 1))
            for i in range(run_len):
                window_ids[offset + i] = int(rng.choice(fault.symptom_ids))

        # Background fills only the untouched slots, so the coverage cycle is
        # never clobbered by a burst or decoy run.
        window_ids = [tid if tid is not None else background_template()
                      for tid in window_ids]
        for i, tid in enumerate(window_ids):
            line_index = base_line + i - 1
            lines.append(f"{_timestamp(line_index)} {_render(templates[tid], rng)}")

    # trailing partial window, plain background
    for extra in range(num_windows * spec.window, spec.num_lines):
        lines.append(f"{_timestamp(extra)} {_render(templates[background_ids[0]], rng)}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "corpus.log"
    label_path = out / "labels.txt"
    manifest_path = out / "manifest.json"
    log_path.write_text("\n".join(lines) + "\n")
    label_path.write_text("".join(f"{ln}\n" for ln in labeled))

    manifest = CorpusManifest(
        spec=asdict(spec),
        templates=[" ".join(t) for t in templates],
        labeled_lines=labeled,
        faults=fault_records,
        num_windows=num_windows,
        num_anomalous_windows=anomalous_windows,
    )
    manifest_path.write_text(manifest.to_json())
    return CorpusArtifacts(log_path=log_path, label_path=label_path,
                           manifest_path=manifest_path, manifest=manifest)
