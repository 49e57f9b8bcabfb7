"""Dynamic DASH manifests with SegmentTemplate addressing."""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from typing import Optional

from .errors import MalformedError, PreconditionError

NS = "urn:mpeg:dash:schema:mpd:2011"
TIMESCALE = 90_000
INIT_URL = "init.mp4"
MEDIA_URL = "seg-$Number$.m4s"

ET.register_namespace("", NS)


def _q(tag: str) -> str:
    return f"{{{NS}}}{tag}"


@dataclass(frozen=True)
class MpdConfig:
    segment_duration_s: float = 2.0
    fragment_duration_s: float = 0.5
    availability_start_time_us: int = 0
    minimum_update_period_s: float = 2.0
    low_latency: bool = False
    suggested_presentation_delay_s: Optional[float] = None
    bandwidth: int = 10_000_000
    width: int = 1920
    height: int = 1080

    def __post_init__(self):
        if self.segment_duration_s <= 0 or self.fragment_duration_s <= 0:
            raise PreconditionError("segment and fragment durations must be positive")
        ratio = Fraction(str(self.segment_duration_s)) / Fraction(str(self.fragment_duration_s))
        if ratio.denominator != 1:
            raise PreconditionError("fragment duration must divide segment duration")
        if self.suggested_presentation_delay_s is None:
            spd = 3 * self.fragment_duration_s if self.low_latency else 2 * self.segment_duration_s
            object.__setattr__(self, "suggested_presentation_delay_s", spd)

    @property
    def fragments_per_segment(self) -> int:
        return int(Fraction(str(self.segment_duration_s)) / Fraction(str(self.fragment_duration_s)))

    @property
    def segment_us(self) -> int:
        return round(self.segment_duration_s * 1e6)

    @property
    def fragment_us(self) -> int:
        return round(self.fragment_duration_s * 1e6)


@dataclass
class SegmentTemplate:
    initialization: str = INIT_URL
    media: str = MEDIA_URL
    timescale: int = TIMESCALE
    duration: int = 180_000
    start_number: int = 1
    availability_time_offset: Optional[float] = None
    extra: dict = field(default_factory=dict)


@dataclass
class MpdDocument:
    type: str = "dynamic"
    availability_start_time_us: int = 0
    minimum_update_period_s: float = 2.0
    suggested_presentation_delay_s: float = 4.0
    representation_id: str = "video"
    bandwidth: int = 10_000_000
    width: int = 1920
    height: int = 1080
    mime_type: str = "video/mp4"
    template: SegmentTemplate = field(default_factory=SegmentTemplate)
    extra: dict = field(default_factory=dict)  # unknown MPD-level attributes

    @property
    def segment_duration_s(self) -> float:
        return self.template.duration / self.template.timescale


# --- ISO-8601 helpers --------------------------------------------------------


def format_duration(seconds: float) -> str:
    text = f"{seconds:.6f}".rstrip("0").rstrip(".")
    return f"PT{text}S"


_DUR = re.compile(r"^P(?:(\d+(?:\.\d+)?)D)?(?:T(?:(\d+(?:\.\d+)?)H)?(?:(\d+(?:\.\d+)?)M)?(?:(\d+(?:\.\d+)?)S)?)?$")


def parse_duration(text: str) -> float:
    m = _DUR.match(text.strip())
    if not m or text.strip() in ("P", "PT"):
        raise MalformedError(f"bad ISO-8601 duration {text!r}", 0)
    d, h, mi, s = (float(g) if g else 0.0 for g in m.groups())
    return ((d * 24 + h) * 60 + mi) * 60 + s


def format_datetime(us: int) -> str:
    dt = datetime.fromtimestamp(us // 1_000_000, tz=timezone.utc)
    frac = us % 1_000_000
    base = dt.strftime("%Y-%m-%dT%H:%M:%S")
    return f"{base}.{frac:06d}Z" if frac else f"{base}Z"


def parse_datetime(text: str) -> int:
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise MalformedError(f"bad dateTime {text!r}", 0) from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86_400 + delta.seconds) * 1_000_000 + delta.microseconds


# --- model <-> XML -----------------------------------------------------------


def document_for(cfg: MpdConfig) -> MpdDocument:
    ato = cfg.segment_duration_s - cfg.fragment_duration_s if cfg.low_latency else None
    return MpdDocument(
        availability_start_time_us=cfg.availability_start_time_us,
        minimum_update_period_s=cfg.minimum_update_period_s,
        suggested_presentation_delay_s=cfg.suggested_presentation_delay_s,
        bandwidth=cfg.bandwidth,
        width=cfg.width,
        height=cfg.height,
        template=SegmentTemplate(duration=round(cfg.segment_duration_s * TIMESCALE), availability_time_offset=ato),
    )


def _num(x: float) -> str:
    return repr(float(x)).rstrip("0").rstrip(".") if x != int(x) else str(int(x))


def render_document(doc: MpdDocument) -> str:
    root = ET.Element(_q("MPD"), {
        "profiles": "urn:mpeg:dash:profile:isoff-live:2011",
        "type": doc.type,
        "availabilityStartTime": format_datetime(doc.availability_start_time_us),
        "minimumUpdatePeriod": format_duration(doc.minimum_update_period_s),
        "suggestedPresentationDelay": format_duration(doc.suggested_presentation_delay_s),
        "minBufferTime": format_duration(doc.segment_duration_s),
        **doc.extra,
    })
    period = ET.SubElement(root, _q("Period"), {"id": "0", "start": "PT0S"})
    aset = ET.SubElement(period, _q("AdaptationSet"), {
        "contentType": "video", "mimeType": doc.mime_type, "segmentAlignment": "true",
    })
    t = doc.template
    attrs = {
        "initialization": t.initialization,
        "media": t.media,
        "timescale": str(t.timescale),
        "duration": str(t.duration),
        "startNumber": str(t.start_number),
    }
    if t.availability_time_offset is not None:
        attrs["availabilityTimeOffset"] = _num(t.availability_time_offset)
        attrs["availabilityTimeComplete"] = "false"
    attrs.update(t.extra)
    ET.SubElement(aset, _q("SegmentTemplate"), attrs)
    ET.SubElement(aset, _q("Representation"), {
        "id": doc.representation_id,
        "bandwidth": str(doc.bandwidth),
        "width": str(doc.width),
        "height": str(doc.height),
        "codecs": "avc1.640028",
    })
    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


def render_mpd(cfg: MpdConfig) -> str:
    return render_document(document_for(cfg))


_MPD_KNOWN = {"profiles", "type", "availabilityStartTime", "minimumUpdatePeriod", "suggestedPresentationDelay", "minBufferTime"}
_TPL_KNOWN = {"initialization", "media", "timescale", "duration", "startNumber", "availabilityTimeOffset", "availabilityTimeComplete"}


def parse_mpd(text: str) -> MpdDocument:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise MalformedError(f"not well-formed XML: {e}", 0) from None
    if root.tag != _q("MPD"):
        raise MalformedError(f"root element is {root.tag}, not MPD", 0)
    aset = root.find(f"{_q('Period')}/{_q('AdaptationSet')}")
    if aset is None:
        raise MalformedError("MPD has no Period/AdaptationSet", 0)
    tpl = aset.find(_q("SegmentTemplate"))
    rep = aset.find(_q("Representation"))
    if tpl is None or rep is None:
        raise MalformedError("AdaptationSet lacks SegmentTemplate or Representation", 0)
    try:
        a = root.attrib
        ato = tpl.get("availabilityTimeOffset")
        return MpdDocument(
            type=a.get("type", "static"),
            availability_start_time_us=parse_datetime(a["availabilityStartTime"]),
            minimum_update_period_s=parse_duration(a.get("minimumUpdatePeriod", "PT0S")),
            suggested_presentation_delay_s=parse_duration(a.get("suggestedPresentationDelay", "PT0S")),
            representation_id=rep.get("id", ""),
            bandwidth=int(rep.get("bandwidth", "0")),
            width=int(rep.get("width", "0")),
            height=int(rep.get("height", "0")),
            mime_type=aset.get("mimeType", ""),
            template=SegmentTemplate(
                initialization=tpl.get("initialization", ""),
                media=tpl.get("media", ""),
                timescale=int(tpl.get("timescale", "1")),
                duration=int(tpl.get("duration")),
                start_number=int(tpl.get("startNumber", "1")),
                availability_time_offset=float(ato) if ato is not None else None,
                extra={k: v for k, v in tpl.attrib.items() if k not in _TPL_KNOWN},
            ),
            extra={k: v for k, v in a.items() if k not in _MPD_KNOWN},
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedError(f"bad MPD attribute: {e}", 0) from None


# --- timing ------------------------------------------------------------------


def segment_for_frame(seq: int, fps: int, cfg: MpdConfig) -> int:
    per_segment = Fraction(fps) * Fraction(str(cfg.segment_duration_s))
    return 1 + math.floor(seq / per_segment)


def availability_time(n: int, cfg: MpdConfig) -> int:
    """When segment ``n``'s URL may be requested, in microseconds."""
    if n < 1:
        raise PreconditionError("segment numbers start at 1")
    whole = n if not cfg.low_latency else n - 1
    return cfg.availability_start_time_us + whole * cfg.segment_us


def chunk_availability_time(n: int, k: int, cfg: MpdConfig) -> int:
    """When fragment ``k`` (0-based) of segment ``n`` has been produced."""
    if not 0 <= k < cfg.fragments_per_segment:
        raise PreconditionError("fragment index out of range")
    return cfg.availability_start_time_us + (n - 1) * cfg.segment_us + (k + 1) * cfg.fragment_us
