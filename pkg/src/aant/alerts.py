"""Three-stage alert pipeline (risk assessment, urgency-tailored phrasing,
legality verification) and accident archiving, driven through a pluggable
language-model client with a deterministic mock.

The legality registry is deliberately a small, documented rule list; extend
it by passing additional LegalityRule entries to verify_legality.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Protocol

from .reports import (
    AccidentReport,
    DuringFactors,
    Participant,
    PostFactors,
    PreFactors,
    serialize_report,
    validate_report,
)

VULNERABLE_AGENTS = frozenset({"pedestrian", "cyclist"})

DISTANCE_CLASSES = ("far", "near", "imminent")


class UrgencyLevel(IntEnum):
    NONE = 0
    ADVISORY = 1
    WARNING = 2
    CRITICAL = 3

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ScoreBands:
    """Lower edges of the advisory/warning/critical score bands."""

    advisory: float = 0.3
    warning: float = 0.5
    critical: float = 0.8
    escalation_min_score: float = 0.3

    def __post_init__(self):
        if not 0 <= self.advisory <= self.warning <= self.critical <= 1:
            raise ValueError("bands must satisfy 0 <= advisory <= warning <= critical <= 1")


@dataclass(frozen=True)
class SceneSummary:
    agent_counts: dict[str, int] = field(default_factory=dict)
    min_distance_class: str = "far"
    weather: str = "Clear"
    lighting: str = "Daylight"
    roadway_surface: str = "Dry"

    def __post_init__(self):
        if self.min_distance_class not in DISTANCE_CLASSES:
            raise ValueError(f"min_distance_class must be one of {DISTANCE_CLASSES}")
        if any(count < 0 for count in self.agent_counts.values()):
            raise ValueError("agent counts must be non-negative")

    def has_vulnerable_agents(self) -> bool:
        return any(
            kind.lower() in VULNERABLE_AGENTS and count > 0 for kind, count in self.agent_counts.items()
        )


@dataclass(frozen=True)
class PredictionSummary:
    video_score: float
    peak_frame: int = 0
    similarity_margin: float = 0.0  # mean accident-minus-normal similarity


@dataclass(frozen=True)
class LegalityVerdict:
    passed: bool
    violated_rules: tuple[str, ...] = ()


@dataclass(frozen=True)
class AlertMessage:
    urgency: UrgencyLevel
    text: str
    legality: LegalityVerdict
    fallback_used: bool = False


class LanguageModelClient(Protocol):
    def complete(self, prompt: str) -> str: ...


def assess_risk(video_score: float, scene: SceneSummary, bands: ScoreBands = ScoreBands()) -> UrgencyLevel:
    """Score bands set the base level; imminent range or vulnerable agents
    escalate one level (capped) once the score clears the advisory band."""
    if not 0.0 <= video_score <= 1.0:
        raise ValueError(f"video_score must lie in [0, 1], got {video_score}")
    if video_score >= bands.critical:
        level = UrgencyLevel.CRITICAL
    elif video_score >= bands.warning:
        level = UrgencyLevel.WARNING
    elif video_score >= bands.advisory:
        level = UrgencyLevel.ADVISORY
    else:
        level = UrgencyLevel.NONE
    escalate = scene.min_distance_class == "imminent" or scene.has_vulnerable_agents()
    if escalate and video_score >= bands.escalation_min_score:
        level = UrgencyLevel(min(level + 1, UrgencyLevel.CRITICAL))
    return level


_TONE_DIRECTIVES = {
    UrgencyLevel.NONE: "Phrase the message as a friendly reminder; relaxed tone, at most two sentences.",
    UrgencyLevel.ADVISORY: "Phrase the message as a calm advisory; measured tone, at most two sentences.",
    UrgencyLevel.WARNING: "Phrase the message as a firm warning; direct tone, short sentences, "
    "and tell the driver to maintain a safe distance.",
    UrgencyLevel.CRITICAL: "Provide urgent and direct feedback; start with the required action, "
    "keep it to one or two short imperative sentences, and tell the driver to maintain a safe distance.",
}


def build_alert_prompt(
    frame_ref: str,
    prediction: PredictionSummary,
    scene: SceneSummary,
    urgency: UrgencyLevel,
) -> str:
    """Deterministic three-section prompt: scene facts, prediction summary,
    urgency-dependent instruction block."""
    agents = ", ".join(f"{count} {kind}" for kind, count in sorted(scene.agent_counts.items())) or "none"
    lines = [
        "## Scene",
        f"frame: {frame_ref}",
        f"agents: {agents}",
        f"closest agent range: {scene.min_distance_class}",
        f"weather: {scene.weather}; lighting: {scene.lighting}; roadway surface: {scene.roadway_surface}",
        "## Prediction",
        f"accident probability: {prediction.video_score:.3f}",
        f"peak frame: {prediction.peak_frame}",
        f"accident-report similarity margin: {prediction.similarity_margin:.3f}",
        f"urgency: {urgency}",
        "## Instruction",
        _TONE_DIRECTIVES[urgency],
        "Never advise running signals or exceeding the speed limit.",
    ]
    return "\n".join(lines)


@dataclass(frozen=True)
class LegalityRule:
    rule_id: str
    description: str
    forbidden_phrases: tuple[str, ...] = ()
    required_phrases: tuple[str, ...] = ()  # any one suffices
    min_urgency: UrgencyLevel = UrgencyLevel.NONE


DISTANCE_PHRASES = (
    "maintain a safe distance",
    "keep a safe following distance",
    "keep your distance",
    "increase your distance",
    "increase following distance",
)

DEFAULT_LEGALITY_RULES = (
    LegalityRule(
        rule_id="empty-alert",
        description="alert text must be non-empty",
    ),
    LegalityRule(
        rule_id="no-run-signal",
        description="never advise running a signal or sign",
        forbidden_phrases=(
            "accelerate through",
            "run the red",
            "run the light",
            "run the stop sign",
            "ignore the stop sign",
            "ignore the signal",
            "speed through the intersection",
        ),
    ),
    LegalityRule(
        rule_id="no-speeding",
        description="never advise exceeding the speed limit",
        forbidden_phrases=(
            "exceed the speed limit",
            "above the speed limit",
            "faster than the limit",
            "outrun",
        ),
    ),
    LegalityRule(
        rule_id="distance-keeping",
        description="warning-level alerts and above must include a distance-keeping phrase",
        required_phrases=DISTANCE_PHRASES,
        min_urgency=UrgencyLevel.WARNING,
    ),
)


def verify_legality(
    alert_text: str,
    urgency: UrgencyLevel = UrgencyLevel.WARNING,
    rules: tuple[LegalityRule, ...] = DEFAULT_LEGALITY_RULES,
) -> LegalityVerdict:
    violated = []
    lowered = alert_text.lower()
    for rule in rules:
        if rule.rule_id == "empty-alert":
            if not alert_text.strip():
                violated.append(rule.rule_id)
            continue
        if urgency < rule.min_urgency:
            continue
        if any(phrase in lowered for phrase in rule.forbidden_phrases):
            violated.append(rule.rule_id)
        if rule.required_phrases and not any(phrase in lowered for phrase in rule.required_phrases):
            violated.append(rule.rule_id)
    return LegalityVerdict(passed=not violated, violated_rules=tuple(violated))


CRITICAL_ACTION_VERBS = ("brake", "slow", "stop", "steer", "yield")

SAFE_FALLBACK_TEXTS = {
    UrgencyLevel.ADVISORY: "Traffic conditions are changing ahead. Stay alert and keep a safe following distance.",
    UrgencyLevel.WARNING: "Potential accident risk detected. Be prepared to slow down and maintain a safe distance.",
    UrgencyLevel.CRITICAL: "Brake and slow down now. High collision risk ahead; maintain a safe distance.",
}

SUPPRESSED_STATUS_LINE = "status: no elevated risk"


class MockLanguageModelClient:
    """Deterministic canned completions keyed off the prompt's urgency line."""

    def __init__(self, seed: int = 0, forced_response: str | None = None):
        self.seed = seed
        self.forced_response = forced_response
        self.prompts: list[str] = []

    _ALERTS = {
        UrgencyLevel.NONE: "Conditions look stable. Keep cruising and enjoy the drive.",
        UrgencyLevel.ADVISORY: "Traffic ahead is getting busier. Ease off the accelerator and keep a safe following distance.",
        UrgencyLevel.WARNING: "Potential accident detected. Be prepared to slow down and maintain a safe distance from the vehicle ahead.",
        UrgencyLevel.CRITICAL: "Brake now and maintain a safe distance. Collision risk directly ahead.",
    }

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if self.forced_response is not None:
            return self.forced_response
        if "incident narrative" in prompt.lower():
            return self._narrative(prompt)
        for line in prompt.splitlines():
            if line.startswith("urgency: "):
                return self._ALERTS[UrgencyLevel[line.removeprefix("urgency: ").upper()]]
        return self._ALERTS[UrgencyLevel.WARNING]

    @staticmethod
    def _narrative(prompt: str) -> str:
        facts = [line for line in prompt.splitlines() if line.startswith("- ")]
        detail = " ".join(fact.removeprefix("- ") for fact in facts)
        return (
            "The system anticipated a collision and recorded the scene. "
            f"{detail} The ego vehicle issued a warning before the event."
        ).strip()


def generate_alert(
    client: LanguageModelClient,
    frame_ref: str,
    prediction: PredictionSummary,
    scene: SceneSummary,
    bands: ScoreBands = ScoreBands(),
    friendly_reminders: bool = False,
) -> AlertMessage:
    """Assess, prompt, verify; one constrained retry, then a safe fallback.
    A legality-failing message is never returned."""
    urgency = assess_risk(prediction.video_score, scene, bands)
    if urgency == UrgencyLevel.NONE and not friendly_reminders:
        return AlertMessage(
            urgency=urgency,
            text=SUPPRESSED_STATUS_LINE,
            legality=LegalityVerdict(passed=True),
        )

    prompt = build_alert_prompt(frame_ref, prediction, scene, urgency)
    for attempt in range(2):
        text = client.complete(prompt)
        verdict = verify_legality(text, urgency)
        if verdict.passed and _has_required_action(text, urgency):
            return AlertMessage(urgency=urgency, text=text, legality=verdict)
        prompt = (
            prompt
            + "\nThe previous draft violated rules "
            + ", ".join(verdict.violated_rules or ("missing-action-verb",))
            + ". Rewrite it in full compliance."
        )
    fallback = SAFE_FALLBACK_TEXTS.get(urgency, SAFE_FALLBACK_TEXTS[UrgencyLevel.ADVISORY])
    return AlertMessage(
        urgency=urgency,
        text=fallback,
        legality=verify_legality(fallback, urgency),
        fallback_used=True,
    )


def _has_required_action(text: str, urgency: UrgencyLevel) -> bool:
    if urgency < UrgencyLevel.CRITICAL:
        return True
    lowered = text.lower()
    return any(verb in lowered for verb in CRITICAL_ACTION_VERBS)


def append_alert_log(path: str | Path, alert: AlertMessage, timestamp: float | None = None) -> None:
    entry = {
        "timestamp": _time.time() if timestamp is None else timestamp,
        "urgency": str(alert.urgency),
        "text": alert.text,
        "legality": {"passed": alert.legality.passed, "violated_rules": list(alert.legality.violated_rules)},
    }
    with open(path, "a") as fh:
        fh.write(json.dumps(entry) + "\n")


@dataclass(frozen=True)
class EnvironmentLog:
    """Rolling scene context captured before and during a predicted accident."""

    weather: str
    lighting: str
    roadway_surface: str
    road_conditions: str
    location: str = ""
    time: str = ""
    participants: tuple[Participant, ...] = ()
    behaviors: str = ""
    collision_type: str = "Other"
    severity: str = "None"
    damage_area: str = "Front Bumper"

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentLog":
        participants = tuple(
            Participant(agent_type=p["agent_type"], movement=p["movement"])
            for p in data.get("participants", [])
        )
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown environment log fields: {sorted(unknown)}")
        kwargs = {k: v for k, v in data.items() if k != "participants"}
        return cls(participants=participants, **kwargs)


class ReportQuarantinedError(Exception):
    """Raised when an assembled report fails validation and is not archived."""

    def __init__(self, report: AccidentReport, findings):
        self.report = report
        self.findings = findings
        rules = ", ".join(f.rule_id for f in findings)
        super().__init__(f"report {report.id} quarantined by rules: {rules}")


def build_narrative_prompt(env_log: EnvironmentLog, prediction: PredictionSummary) -> str:
    lines = [
        "Write the incident narrative for a standardized accident report.",
        f"- predicted accident probability {prediction.video_score:.3f} peaking at frame {prediction.peak_frame}",
        f"- weather {env_log.weather}, lighting {env_log.lighting}, roadway {env_log.roadway_surface}",
        f"- road conditions {env_log.road_conditions}",
    ]
    for p in env_log.participants:
        lines.append(f"- a {p.agent_type} was {p.movement.lower()}")
    if env_log.behaviors:
        lines.append(f"- observed behaviors: {env_log.behaviors}")
    return "\n".join(lines)


def archive_accident(
    env_log: EnvironmentLog,
    prediction: PredictionSummary,
    client: LanguageModelClient,
    archive_dir: str | Path | None = None,
    decision_threshold: float = 0.5,
    report_id: str | None = None,
) -> AccidentReport:
    """Assemble the structured report for a crossed prediction, validate it,
    and persist it; failing reports land in quarantine instead."""
    if prediction.video_score < decision_threshold:
        raise ValueError(
            f"prediction score {prediction.video_score:.3f} never crossed the decision rule"
        )
    narrative = client.complete(build_narrative_prompt(env_log, prediction))
    report = AccidentReport(
        id=report_id or f"incident_frame{prediction.peak_frame}",
        is_accident=True,
        pre=PreFactors(
            weather=env_log.weather,
            lighting=env_log.lighting,
            roadway_surface=env_log.roadway_surface,
            road_conditions=env_log.road_conditions,
            location=env_log.location,
            time=env_log.time,
        ),
        during=DuringFactors(participants=env_log.participants, behaviors=env_log.behaviors),
        narrative=narrative,
        post=PostFactors(
            collision_type=env_log.collision_type,
            severity=env_log.severity,
            damage_area=env_log.damage_area,
        ),
    )
    findings = validate_report(report)
    errors = [f for f in findings if f.severity == "error"]
    if errors:
        if archive_dir is not None:
            quarantine = Path(archive_dir) / "quarantine"
            quarantine.mkdir(parents=True, exist_ok=True)
            (quarantine / f"{report.id}.json").write_text(serialize_report(report) + "\n")
        raise ReportQuarantinedError(report, errors)
    if archive_dir is not None:
        out = Path(archive_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{report.id}.json").write_text(serialize_report(report) + "\n")
    return report
