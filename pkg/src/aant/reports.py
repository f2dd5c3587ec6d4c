"""Structured accident / non-accident reports: schema, validation, dedup, stats.

The report form captures pre-accident environment factors, the participants
and behaviors during the event, and (for accidents only) the outcome. All
categorical fields are closed vocabularies; unknown values are parse errors
rather than silently mapped to "Other".
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass

WEATHER = ("Clear", "Cloudy", "Raining", "Fog/Visibility")

LIGHTING = ("Daylight", "Dusk-Dawn", "Dark-Street Lights", "Dark-No Street Lights")

ROADWAY_SURFACE = ("Dry", "Wet")

ROAD_CONDITIONS = (
    "Holes",
    "Loose Material on Roadway",
    "Obstruction",
    "Construction",
    "Reduced Roadway Width",
    "Other Unusual",
    "Usual",
)

MOVEMENT = (
    "Stopped",
    "Proceeding Straight",
    "Making Right Turn",
    "Making Left Turn",
    "Making U Turn",
    "Backing",
    "Slowing/Stopping",
    "Passing Other Vehicle",
    "Changing Lanes",
    "Parking Maneuver",
    "Entering Traffic",
    "Driving into Opposing Lane",
    "Parked",
    "Merging",
    "Other",
)

COLLISION_TYPE = (
    "Head-On",
    "Side Swipe",
    "Rear End",
    "Broadside",
    "Hit Object",
    "Vehicle/Pedestrian",
    "Other",
)

SEVERITY = ("None", "Minor", "Moderate", "Major")

DAMAGE_AREA = (
    "Front Bumper",
    "Front Driver Side",
    "Front Passenger Side",
    "Left Front Corner",
    "Left Rear",
    "Left Rear Passenger",
    "Rear Bumper",
    "Right Front Corner",
    "Right Rear",
    "Right Rear Passenger",
)

# Editable keyword registries backing the validation rules. These are repo
# artifacts, not authoritative vocabularies.
HIGH_SPEED_KEYWORDS = (
    "high speed",
    "high-speed",
    "at high speeds",
    "speeding",
    "excessive speed",
    "well above the speed limit",
)

RISK_KEYWORDS = (
    "collision",
    "collided",
    "crash",
    "crashed",
    "failed to yield",
    "failed to stop",
    "ran the red light",
    "lost control",
    "rear-ended",
    "struck",
    "impact",
)


class ReportSchemaError(ValueError):
    """Raised when a report document violates the schema or vocabularies."""


@dataclass(frozen=True)
class PreFactors:
    weather: str
    lighting: str
    roadway_surface: str
    road_conditions: str
    location: str
    time: str


@dataclass(frozen=True)
class Participant:
    agent_type: str
    movement: str


@dataclass(frozen=True)
class DuringFactors:
    participants: tuple[Participant, ...]
    behaviors: str


@dataclass(frozen=True)
class PostFactors:
    collision_type: str
    severity: str
    damage_area: str


@dataclass(frozen=True)
class AccidentReport:
    id: str
    is_accident: bool
    pre: PreFactors
    during: DuringFactors
    narrative: str
    post: PostFactors | None = None

    def __post_init__(self):
        _check_vocab("weather", self.pre.weather, WEATHER)
        _check_vocab("lighting", self.pre.lighting, LIGHTING)
        _check_vocab("roadway_surface", self.pre.roadway_surface, ROADWAY_SURFACE)
        _check_vocab("road_conditions", self.pre.road_conditions, ROAD_CONDITIONS)
        for p in self.during.participants:
            _check_vocab("movement", p.movement, MOVEMENT)
            if not p.agent_type:
                raise ReportSchemaError("participant agent_type must be non-empty")
        if not self.narrative:
            raise ReportSchemaError("narrative must be non-empty")
        if self.is_accident:
            if self.post is None:
                raise ReportSchemaError("accident report requires post factors")
            _check_vocab("collision_type", self.post.collision_type, COLLISION_TYPE)
            _check_vocab("severity", self.post.severity, SEVERITY)
            _check_vocab("damage_area", self.post.damage_area, DAMAGE_AREA)
        elif self.post is not None:
            raise ReportSchemaError("non-accident report must not carry post factors")


@dataclass(frozen=True)
class ValidationFinding:
    rule_id: str
    severity: str  # "error" | "warning"
    message: str


def _check_vocab(name: str, value: str, vocab: tuple[str, ...]) -> None:
    if value not in vocab:
        raise ReportSchemaError(f"unknown {name} value {value!r}; expected one of {list(vocab)}")


def _require(mapping: dict, key: str, context: str) -> object:
    if not isinstance(mapping, dict):
        raise ReportSchemaError(f"{context} must be a JSON object, got {type(mapping).__name__}")
    if key not in mapping:
        raise ReportSchemaError(f"missing required field {key!r} in {context}")
    return mapping[key]


def parse_report(document: str) -> AccidentReport:
    """Parse and schema-validate a report JSON document."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ReportSchemaError(f"malformed JSON: {exc}") from exc
    return report_from_dict(data)


def report_from_dict(data: dict) -> AccidentReport:
    if not isinstance(data, dict):
        raise ReportSchemaError("report document must be a JSON object")
    pre_raw = _require(data, "pre", "report")
    during_raw = _require(data, "during", "report")
    pre = PreFactors(
        weather=str(_require(pre_raw, "weather", "pre")),
        lighting=str(_require(pre_raw, "lighting", "pre")),
        roadway_surface=str(_require(pre_raw, "roadway_surface", "pre")),
        road_conditions=str(_require(pre_raw, "road_conditions", "pre")),
        location=str(pre_raw.get("location", "")),
        time=str(pre_raw.get("time", "")),
    )
    participants = tuple(
        Participant(
            agent_type=str(_require(p, "agent_type", "participant")),
            movement=str(_require(p, "movement", "participant")),
        )
        for p in _require(during_raw, "participants", "during")
    )
    during = DuringFactors(participants=participants, behaviors=str(during_raw.get("behaviors", "")))
    is_accident = bool(_require(data, "is_accident", "report"))
    post = None
    if "post" in data and data["post"] is not None:
        post_raw = data["post"]
        post = PostFactors(
            collision_type=str(_require(post_raw, "collision_type", "post")),
            severity=str(_require(post_raw, "severity", "post")),
            damage_area=str(_require(post_raw, "damage_area", "post")),
        )
    return AccidentReport(
        id=str(_require(data, "id", "report")),
        is_accident=is_accident,
        pre=pre,
        during=during,
        narrative=str(_require(data, "narrative", "report")),
        post=post,
    )


def report_to_dict(report: AccidentReport) -> dict:
    data = {
        "id": report.id,
        "is_accident": report.is_accident,
        "pre": {
            "weather": report.pre.weather,
            "lighting": report.pre.lighting,
            "roadway_surface": report.pre.roadway_surface,
            "road_conditions": report.pre.road_conditions,
            "location": report.pre.location,
            "time": report.pre.time,
        },
        "during": {
            "participants": [
                {"agent_type": p.agent_type, "movement": p.movement} for p in report.during.participants
            ],
            "behaviors": report.during.behaviors,
        },
        "narrative": report.narrative,
    }
    if report.post is not None:
        data["post"] = {
            "collision_type": report.post.collision_type,
            "severity": report.post.severity,
            "damage_area": report.post.damage_area,
        }
    return data


def serialize_report(report: AccidentReport) -> str:
    return json.dumps(report_to_dict(report), indent=1)


def _contains_any(text: str, keywords: tuple[str, ...]) -> str | None:
    lowered = text.lower()
    for kw in keywords:
        if kw in lowered:
            return kw
    return None


def validate_report(report: AccidentReport) -> list[ValidationFinding]:
    """Run the fixed consistency-rule registry; findings are the output."""
    findings = []
    kw = _contains_any(report.narrative, HIGH_SPEED_KEYWORDS)
    if kw and report.pre.weather in ("Fog/Visibility", "Raining"):
        findings.append(
            ValidationFinding(
                rule_id="R1",
                severity="error",
                message=f"narrative mentions {kw!r} under {report.pre.weather} weather",
            )
        )
    if not report.is_accident:
        kw = _contains_any(report.narrative, RISK_KEYWORDS)
        if kw:
            findings.append(
                ValidationFinding(
                    rule_id="R2",
                    severity="error",
                    message=f"non-accident narrative contains risk keyword {kw!r}",
                )
            )
    if not report.during.participants:
        findings.append(
            ValidationFinding(rule_id="R3", severity="warning", message="report lists no participants")
        )
    return findings


def _word_trigrams(text: str) -> set[tuple[str, str, str]]:
    words = re.findall(r"[a-z0-9]+", text.lower())
    return {tuple(words[i : i + 3]) for i in range(len(words) - 2)}


def narrative_similarity(a: str, b: str) -> float:
    """Jaccard similarity of word 3-gram sets (1.0 for identical short texts)."""
    ga, gb = _word_trigrams(a), _word_trigrams(b)
    if not ga and not gb:
        return 1.0 if re.findall(r"[a-z0-9]+", a.lower()) == re.findall(r"[a-z0-9]+", b.lower()) else 0.0
    union = ga | gb
    if not union:
        return 0.0
    return len(ga & gb) / len(union)


def deduplicate(reports: list[AccidentReport], overlap_threshold: float = 0.6) -> list[tuple[str, str]]:
    """Flag id pairs whose narratives overlap at or above the threshold."""
    if not 0 < overlap_threshold <= 1:
        raise ValueError(f"overlap_threshold must lie in (0, 1], got {overlap_threshold}")
    if len(reports) < 2:
        raise ValueError("need at least two reports to deduplicate")
    flagged = []
    for i in range(len(reports)):
        for j in range(i + 1, len(reports)):
            if narrative_similarity(reports[i].narrative, reports[j].narrative) >= overlap_threshold:
                flagged.append((reports[i].id, reports[j].id))
    return flagged


def corpus_stats(reports: list[AccidentReport]) -> dict:
    """Exact per-factor value counts plus a factor-value x severity cross-tab."""
    factors = {
        "weather": Counter(),
        "lighting": Counter(),
        "roadway_surface": Counter(),
        "road_conditions": Counter(),
        "movement": Counter(),
        "collision_type": Counter(),
        "severity": Counter(),
        "damage_area": Counter(),
    }
    severity_crosstab: dict[str, dict[str, Counter]] = {
        "weather": {},
        "lighting": {},
        "roadway_surface": {},
        "road_conditions": {},
        "collision_type": {},
        "damage_area": {},
    }
    for r in reports:
        factors["weather"][r.pre.weather] += 1
        factors["lighting"][r.pre.lighting] += 1
        factors["roadway_surface"][r.pre.roadway_surface] += 1
        factors["road_conditions"][r.pre.road_conditions] += 1
        for p in r.during.participants:
            factors["movement"][p.movement] += 1
        if r.post is not None:
            factors["collision_type"][r.post.collision_type] += 1
            factors["severity"][r.post.severity] += 1
            factors["damage_area"][r.post.damage_area] += 1
            for factor, value in (
                ("weather", r.pre.weather),
                ("lighting", r.pre.lighting),
                ("roadway_surface", r.pre.roadway_surface),
                ("road_conditions", r.pre.road_conditions),
                ("collision_type", r.post.collision_type),
                ("damage_area", r.post.damage_area),
            ):
                severity_crosstab[factor].setdefault(value, Counter())[r.post.severity] += 1
    return {
        "n_reports": len(reports),
        "n_accidents": sum(1 for r in reports if r.is_accident),
        "factors": {k: dict(v) for k, v in factors.items()},
        "severity_crosstab": {
            factor: {value: dict(counts) for value, counts in table.items()}
            for factor, table in severity_crosstab.items()
        },
    }


def render_report_text(report: AccidentReport) -> str:
    """Deterministic canonical narrative used as text-encoder input.

    Environment and participant sentences come first so accident and
    non-accident variants of one scenario share a common prefix and differ
    only in the behavior/outcome block.
    """
    parts = [
        f"Weather was {report.pre.weather.lower()}.",
        f"Lighting was {report.pre.lighting.lower()}.",
        f"The roadway surface was {report.pre.roadway_surface.lower()}.",
        f"Road conditions: {report.pre.road_conditions.lower()}.",
    ]
    if report.pre.location:
        parts.append(f"Location: {report.pre.location}.")
    if report.pre.time:
        parts.append(f"Time: {report.pre.time}.")
    for p in report.during.participants:
        parts.append(f"A {p.agent_type.lower()} was {p.movement.lower()}.")
    if report.during.behaviors:
        parts.append(f"Behaviors: {report.during.behaviors}")
    if report.post is not None:
        parts.append(
            f"Outcome: a {report.post.collision_type.lower()} collision of {report.post.severity.lower()}"
            f" severity with damage to the {report.post.damage_area.lower()}."
        )
    parts.append(report.narrative)
    return " ".join(parts)


def _accident(rid, weather, lighting, surface, conditions, participants, behaviors, collision, severity, damage, narrative):
    return AccidentReport(
        id=rid,
        is_accident=True,
        pre=PreFactors(weather, lighting, surface, conditions, "urban intersection", "14:30"),
        during=DuringFactors(tuple(Participant(a, m) for a, m in participants), behaviors),
        narrative=narrative,
        post=PostFactors(collision, severity, damage),
    )


def _non_accident(rid, weather, lighting, surface, conditions, participants, behaviors, narrative):
    return AccidentReport(
        id=rid,
        is_accident=False,
        pre=PreFactors(weather, lighting, surface, conditions, "urban intersection", "14:30"),
        during=DuringFactors(tuple(Participant(a, m) for a, m in participants), behaviors),
        narrative=narrative,
    )


def builtin_corpus() -> list[AccidentReport]:
    """Small built-in report corpus for training text embeddings and demos.

    Accident and non-accident entries come in matched scenario pairs so the
    class embeddings differ by behavior/outcome rather than environment.
    """
    return [
        _accident(
            "acc_rear_end", "Clear", "Daylight", "Dry", "Usual",
            [("car", "Proceeding Straight"), ("car", "Stopped")],
            "The following vehicle closed the gap rapidly without braking.",
            "Rear End", "Minor", "Rear Bumper",
            "The vehicle failed to slow down behind stopped traffic and a rear end collision occurred at the intersection.",
        ),
        _non_accident(
            "non_rear_end", "Clear", "Daylight", "Dry", "Usual",
            [("car", "Proceeding Straight"), ("car", "Stopped")],
            "The following vehicle decelerated smoothly well before the queue.",
            "The vehicle reduced speed early behind stopped traffic and kept a safe following distance through the intersection.",
        ),
        _accident(
            "acc_wet_broadside", "Raining", "Dusk-Dawn", "Wet", "Usual",
            [("car", "Making Left Turn"), ("truck", "Proceeding Straight")],
            "The turning car misjudged the gap across the oncoming lane.",
            "Broadside", "Moderate", "Front Driver Side",
            "A turning vehicle crossed in front of oncoming traffic on the wet road and was struck broadside.",
        ),
        _non_accident(
            "non_wet_turn", "Raining", "Dusk-Dawn", "Wet", "Usual",
            [("car", "Making Left Turn"), ("truck", "Proceeding Straight")],
            "The turning car waited for a clear gap and turned cautiously.",
            "The vehicle waited for oncoming traffic to clear on the wet road and completed the left turn without incident.",
        ),
        _accident(
            "acc_lane_change", "Cloudy", "Daylight", "Dry", "Usual",
            [("car", "Changing Lanes"), ("motorcycle", "Proceeding Straight")],
            "The car drifted into the adjacent lane without checking the mirror.",
            "Side Swipe", "Minor", "Right Front Corner",
            "During an abrupt lane change the car side swiped a motorcycle traveling in the adjacent lane.",
        ),
        _non_accident(
            "non_lane_change", "Cloudy", "Daylight", "Dry", "Usual",
            [("car", "Changing Lanes"), ("motorcycle", "Proceeding Straight")],
            "The car signaled, checked mirrors, and merged with ample space.",
            "The vehicle signaled early and changed lanes smoothly, leaving ample space for the motorcycle alongside.",
        ),
        _accident(
            "acc_night_object", "Clear", "Dark-Street Lights", "Dry", "Obstruction",
            [("car", "Proceeding Straight")],
            "Debris on the roadway appeared suddenly inside the stopping distance.",
            "Hit Object", "Minor", "Front Bumper",
            "The vehicle struck debris left on the dark roadway before the driver could steer around it.",
        ),
        _non_accident(
            "non_night_object", "Clear", "Dark-Street Lights", "Dry", "Obstruction",
            [("car", "Proceeding Straight")],
            "The driver spotted the debris early and steered around it calmly.",
            "The vehicle noticed debris on the dark roadway in good time and passed it safely at reduced speed.",
        ),
        _accident(
            "acc_pedestrian", "Clear", "Daylight", "Dry", "Usual",
            [("car", "Making Right Turn"), ("pedestrian", "Other")],
            "The turning car focused on traffic and missed the crossing pedestrian.",
            "Vehicle/Pedestrian", "Major", "Front Passenger Side",
            "While turning right the vehicle struck a pedestrian stepping into the crosswalk.",
        ),
        _non_accident(
            "non_pedestrian", "Clear", "Daylight", "Dry", "Usual",
            [("car", "Making Right Turn"), ("pedestrian", "Other")],
            "The turning car yielded until the crosswalk was completely clear.",
            "The vehicle paused at the right turn and yielded to a pedestrian in the crosswalk before proceeding.",
        ),
        _accident(
            "acc_head_on", "Fog/Visibility", "Daylight", "Wet", "Reduced Roadway Width",
            [("car", "Driving into Opposing Lane"), ("car", "Proceeding Straight")],
            "The car drifted across the centerline inside the narrowed section.",
            "Head-On", "Major", "Front Bumper",
            "In dense fog the vehicle drifted into the opposing lane of the narrowed road and collided head on.",
        ),
        _non_accident(
            "non_fog_lane", "Fog/Visibility", "Daylight", "Wet", "Reduced Roadway Width",
            [("car", "Proceeding Straight"), ("car", "Proceeding Straight")],
            "Both cars tracked the lane markings slowly through the narrowed section.",
            "The vehicle held its lane at low speed through the foggy narrowed section and passed oncoming traffic safely.",
        ),
    ]


def corpus_class_texts(reports: list[AccidentReport]) -> tuple[list[str], list[str]]:
    """Canonical rendered texts split into (accident, non-accident) lists."""
    pos = [render_report_text(r) for r in reports if r.is_accident]
    neg = [render_report_text(r) for r in reports if not r.is_accident]
    return pos, neg
