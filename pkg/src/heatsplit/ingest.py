"""Meter/weather file ingestion and daily aggregation.

File formats:
  meter CSV     header ``timestamp,energy_kwh``; ISO-8601 UTC timestamps on
                30-minute boundaries; one file per household.
  weather CSV   preamble line ``#station,<id>,<lat>,<lon>`` followed by header
                ``timestamp,temp_c,wind_speed,wind_dir``; hourly rows; empty
                string means missing.
  metadata CSV  header ``household_id,lat,lon,heating_type,year_built,surface_m2``.

Days are delimited in UTC. A day is "complete" when all 48 half-hour meter
readings are present.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import IO, Iterable

from .errors import EmptyFile, FormatError, NoOverlap, NoStations

EARTH_RADIUS_KM = 6371.0
READINGS_PER_DAY = 48
HOURS_PER_DAY = 24
HEATING_TYPES = ("electric", "gas", "other", "unknown")

METER_HEADER = ["timestamp", "energy_kwh"]
WEATHER_HEADER = ["timestamp", "temp_c", "wind_speed", "wind_dir"]
METADATA_HEADER = ["household_id", "lat", "lon", "heating_type", "year_built", "surface_m2"]


@dataclass
class RawMeterSeries:
    """Half-hourly energy readings for one household."""

    household_id: str
    readings: list[tuple[datetime, float]]
    skipped_rows: int = 0
    warnings: list[str] = field(default_factory=list)


@dataclass
class WeatherSeries:
    """Hourly weather observations for one station."""

    station_id: str
    latitude: float
    longitude: float
    readings: list[tuple[datetime, float, float | None, float | None]]
    skipped_rows: int = 0
    warnings: list[str] = field(default_factory=list)

    def mean_temperature(self) -> float:
        return sum(r[1] for r in self.readings) / len(self.readings)


@dataclass
class HouseholdMeta:
    household_id: str
    latitude: float
    longitude: float
    heating_type: str = "unknown"
    year_built: int | None = None
    surface_m2: float | None = None


@dataclass
class DailyObservation:
    date: date
    consumption_kwh: float
    temp_c: float
    complete: bool


@dataclass
class HouseholdSeries:
    """Daily (consumption, temperature) observations for one household."""

    meta: HouseholdMeta
    station_id: str
    days: list[DailyObservation]

    def complete_days(self) -> list[DailyObservation]:
        return [d for d in self.days if d.complete]


def _text_lines(source: IO[bytes] | bytes | str | Path) -> list[str]:
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, bytes):
        data = source
    else:
        data = source.read()
    return io.TextIOWrapper(io.BytesIO(data), encoding="utf-8").read().splitlines()


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_meter_csv(source: IO[bytes] | bytes | str | Path, household_id: str = "") -> RawMeterSeries:
    """Parse a half-hourly meter CSV.

    Unparseable rows (bad timestamp, off-boundary timestamp, negative or
    missing energy) are counted and skipped.  Duplicate timestamps keep the
    first occurrence and record a warning.  Raises FormatError on a header
    mismatch and EmptyFile when no valid rows remain.
    """
    lines = [ln for ln in _text_lines(source) if ln.strip()]
    if not lines or [c.strip() for c in lines[0].split(",")] != METER_HEADER:
        raise FormatError("expected meter header 'timestamp,energy_kwh'")

    seen: dict[datetime, float] = {}
    warnings: list[str] = []
    skipped = 0
    for row in csv.reader(lines[1:]):
        if len(row) != 2:
            skipped += 1
            continue
        try:
            ts = _parse_timestamp(row[0])
            energy = float(row[1])
        except ValueError:
            skipped += 1
            continue
        if ts.minute not in (0, 30) or ts.second or ts.microsecond or energy < 0:
            skipped += 1
            continue
        if ts in seen:
            warnings.append(f"duplicate timestamp {ts.isoformat()}: kept first value")
            continue
        seen[ts] = energy

    if not seen:
        raise EmptyFile("meter file has no valid rows")
    readings = sorted(seen.items())
    return RawMeterSeries(household_id, readings, skipped, warnings)


def parse_weather_csv(source: IO[bytes] | bytes | str | Path) -> WeatherSeries:
    """Parse an hourly weather CSV with a ``#station`` preamble.

    Rows without a temperature are dropped.  Duplicate timestamps are merged
    by mean when the population standard deviation of their temperatures is
    at most 0.5 degC, and discarded entirely otherwise.
    """
    lines = [ln for ln in _text_lines(source) if ln.strip()]
    if not lines or not lines[0].startswith("#station,"):
        raise FormatError("expected preamble '#station,<id>,<lat>,<lon>'")
    pre = lines[0].split(",")
    if len(pre) != 4:
        raise FormatError("malformed station preamble")
    station_id, lat, lon = pre[1].strip(), float(pre[2]), float(pre[3])

    if len(lines) < 2 or [c.strip() for c in lines[1].split(",")] != WEATHER_HEADER:
        raise FormatError("expected weather header 'timestamp,temp_c,wind_speed,wind_dir'")

    groups: dict[datetime, list[tuple[float, float | None, float | None]]] = {}
    warnings: list[str] = []
    skipped = 0
    for row in csv.reader(lines[2:]):
        if len(row) != 4:
            skipped += 1
            continue
        if not row[1].strip():
            skipped += 1  # empty temperature entry
            continue
        try:
            ts = _parse_timestamp(row[0])
            temp = float(row[1])
            wind_speed = float(row[2]) if row[2].strip() else None
            wind_dir = float(row[3]) if row[3].strip() else None
        except ValueError:
            skipped += 1
            continue
        if not -60.0 <= temp <= 60.0:
            skipped += 1
            continue
        groups.setdefault(ts, []).append((temp, wind_speed, wind_dir))

    readings: list[tuple[datetime, float, float | None, float | None]] = []
    for ts in sorted(groups):
        rows = groups[ts]
        temps = [r[0] for r in rows]
        if len(rows) > 1:
            mean = sum(temps) / len(temps)
            std = math.sqrt(sum((x - mean) ** 2 for x in temps) / len(temps))
            if std > 0.5:
                warnings.append(f"discarded {len(rows)} conflicting rows at {ts.isoformat()}")
                continue
            winds = [r[1] for r in rows if r[1] is not None]
            dirs = [r[2] for r in rows if r[2] is not None]
            readings.append((
                ts,
                mean,
                sum(winds) / len(winds) if winds else None,
                sum(dirs) / len(dirs) if dirs else None,
            ))
            warnings.append(f"merged {len(rows)} duplicate rows at {ts.isoformat()}")
        else:
            readings.append((ts, *rows[0]))

    if not readings:
        raise EmptyFile(f"weather file for station {station_id} has no valid rows")
    return WeatherSeries(station_id, lat, lon, readings, skipped, warnings)


def parse_metadata_csv(source: IO[bytes] | bytes | str | Path) -> list[HouseholdMeta]:
    """Parse the household metadata CSV."""
    lines = [ln for ln in _text_lines(source) if ln.strip()]
    if not lines or [c.strip() for c in lines[0].split(",")] != METADATA_HEADER:
        raise FormatError("expected metadata header "
                          "'household_id,lat,lon,heating_type,year_built,surface_m2'")
    out: list[HouseholdMeta] = []
    for row in csv.reader(lines[1:]):
        if len(row) != 6 or not row[0].strip():
            continue
        heating = row[3].strip().lower() or "unknown"
        if heating not in HEATING_TYPES:
            heating = "unknown"
        year = int(row[4]) if row[4].strip() else None
        if year is not None and not 1800 <= year <= datetime.now(timezone.utc).year:
            year = None
        out.append(HouseholdMeta(
            household_id=row[0].strip(),
            latitude=float(row[1]),
            longitude=float(row[2]),
            heating_type=heating,
            year_built=year,
            surface_m2=float(row[5]) if row[5].strip() else None,
        ))
    if not out:
        raise EmptyFile("metadata file has no rows")
    return out


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometres."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = math.radians(lat2 - lat1)
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


def nearest_station(home: tuple[float, float], stations: Iterable[WeatherSeries]) -> str:
    """Station id minimizing haversine distance; ties go to the smallest id."""
    stations = list(stations)
    if not stations:
        raise NoStations("no weather stations available")
    lat, lon = home
    return min(stations,
               key=lambda s: (haversine_km(lat, lon, s.latitude, s.longitude), s.station_id)
               ).station_id


def merge_daily(meter: RawMeterSeries, weather: WeatherSeries, meta: HouseholdMeta) -> HouseholdSeries:
    """Aggregate meter and weather readings into daily observations.

    Per UTC calendar day the consumption is the sum of that day's interval
    energies and the temperature is the mean of the day's hourly readings,
    with missing hours imputed by the station's global mean before averaging.
    Days with no meter readings are omitted.
    """
    meter_days: dict[date, list[float]] = {}
    for ts, energy in meter.readings:
        meter_days.setdefault(ts.date(), []).append(energy)

    weather_days: dict[date, list[float]] = {}
    for ts, temp, _, _ in weather.readings:
        weather_days.setdefault(ts.date(), []).append(temp)

    m_lo, m_hi = min(meter_days), max(meter_days)
    w_lo, w_hi = min(weather_days), max(weather_days)
    if m_hi < w_lo or w_hi < m_lo:
        raise NoOverlap(f"meter days [{m_lo}..{m_hi}] disjoint from weather days [{w_lo}..{w_hi}]")

    station_mean = weather.mean_temperature()
    days = []
    for day in sorted(meter_days):
        energies = meter_days[day]
        temps = weather_days.get(day, [])
        if len(temps) >= HOURS_PER_DAY:
            temp = sum(temps) / len(temps)
        else:
            temp = (sum(temps) + (HOURS_PER_DAY - len(temps)) * station_mean) / HOURS_PER_DAY
        days.append(DailyObservation(
            date=day,
            consumption_kwh=sum(energies),
            temp_c=temp,
            complete=len(energies) == READINGS_PER_DAY,
        ))
    return HouseholdSeries(meta=meta, station_id=weather.station_id, days=days)


def filter_reference(households: list[HouseholdSeries], min_complete_days: int = 180) -> list[HouseholdSeries]:
    """Keep households with at least ``min_complete_days`` complete days."""
    return [h for h in households if len(h.complete_days()) >= min_complete_days]


def ingest_directory(input_dir: str | Path) -> tuple[list[HouseholdSeries], list[str]]:
    """Load ``meter/*.csv``, ``weather/*.csv`` and ``metadata.csv`` from a directory.

    Returns households sorted by id plus a list of per-file warnings; files
    that fail to parse are reported in the warnings rather than raised.
    """
    root = Path(input_dir)
    problems: list[str] = []

    stations: list[WeatherSeries] = []
    for path in sorted((root / "weather").glob("*.csv")):
        try:
            stations.append(parse_weather_csv(path))
        except (FormatError, EmptyFile) as exc:
            problems.append(f"{path.name}: {exc}")

    meta_path = root / "metadata.csv"
    if not meta_path.exists():
        raise FormatError(f"missing {meta_path}")
    meta_by_id = {m.household_id: m for m in parse_metadata_csv(meta_path)}

    households: list[HouseholdSeries] = []
    for path in sorted((root / "meter").glob("*.csv")):
        hid = path.stem
        meta = meta_by_id.get(hid)
        if meta is None:
            problems.append(f"{path.name}: no metadata row for '{hid}'")
            continue
        try:
            meter = parse_meter_csv(path, household_id=hid)
            sid = nearest_station((meta.latitude, meta.longitude), stations)
            weather = next(s for s in stations if s.station_id == sid)
            households.append(merge_daily(meter, weather, meta))
        except (FormatError, EmptyFile, NoStations, NoOverlap) as exc:
            problems.append(f"{path.name}: {exc}")
    return households, problems
