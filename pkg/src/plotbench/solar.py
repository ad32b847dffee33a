"""Sun elevation and azimuth from site coordinates and a UTC timestamp.

NOAA solar calculator equations (after Meeus, Astronomical Algorithms),
good to roughly 0.02 deg between 1950 and 2100. Azimuth is clockwise from
north. Timestamps are UTC; naive datetimes are taken to be UTC already.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SunPosition:
    elevation_deg: float
    azimuth_deg: float


def _utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def julian_day(ts: datetime) -> float:
    return 2440587.5 + (_utc(ts) - _EPOCH).total_seconds() / 86400.0


def _solar_terms(ts: datetime) -> tuple[float, float]:
    """(declination deg, equation of time minutes)."""
    jc = (julian_day(ts) - 2451545.0) / 36525.0
    l0 = (280.46646 + jc * (36000.76983 + jc * 0.0003032)) % 360.0
    m = 357.52911 + jc * (35999.05029 - 0.0001537 * jc)
    e = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc)
    mr = math.radians(m)
    center = (math.sin(mr) * (1.914602 - jc * (0.004817 + 0.000014 * jc))
              + math.sin(2 * mr) * (0.019993 - 0.000101 * jc)
              + math.sin(3 * mr) * 0.000289)
    omega = math.radians(125.04 - 1934.136 * jc)
    app_long = math.radians(l0 + center - 0.00569 - 0.00478 * math.sin(omega))
    mean_obliq = 23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60.0) / 60.0
    obliq = math.radians(mean_obliq + 0.00256 * math.cos(omega))
    decl = math.degrees(math.asin(math.sin(obliq) * math.sin(app_long)))

    y = math.tan(obliq / 2) ** 2
    l0r = math.radians(l0)
    eot = 4.0 * math.degrees(
        y * math.sin(2 * l0r)
        - 2 * e * math.sin(mr)
        + 4 * e * y * math.sin(mr) * math.cos(2 * l0r)
        - 0.5 * y * y * math.sin(4 * l0r)
        - 1.25 * e * e * math.sin(2 * mr)
    )
    return decl, eot


def refraction_deg(elevation_deg: float) -> float:
    """Standard-atmosphere refraction correction used by the NOAA calculator."""
    h = elevation_deg
    if h > 85.0:
        return 0.0
    t = math.tan(math.radians(h))
    if h > 5.0:
        arcsec = 58.1 / t - 0.07 / t**3 + 0.000086 / t**5
    elif h > -0.575:
        arcsec = 1735.0 + h * (-518.2 + h * (103.4 + h * (-12.79 + h * 0.711)))
    else:
        arcsec = -20.772 / t
    return arcsec / 3600.0


def _check(lat_deg: float, lon_deg: float, ts: datetime) -> None:
    if not abs(lat_deg) <= 90:
        raise ValueError(f"latitude {lat_deg} outside [-90, 90]")
    if not abs(lon_deg) <= 180:
        raise ValueError(f"longitude {lon_deg} outside [-180, 180]")
    if not 1950 <= _utc(ts).year <= 2100:
        raise ValueError(f"timestamp {ts.isoformat()} outside 1950-2100")


def sun_position(lat_deg: float, lon_deg: float, timestamp_utc: datetime,
                 refraction: bool = True) -> SunPosition:
    _check(lat_deg, lon_deg, timestamp_utc)
    ts = _utc(timestamp_utc)
    decl, eot = _solar_terms(ts)
    minutes = ts.hour * 60 + ts.minute + (ts.second + ts.microsecond / 1e6) / 60.0
    tst = (minutes + eot + 4.0 * lon_deg) % 1440.0
    ha = math.radians(tst / 4.0 - 180.0)
    lat, dec = math.radians(lat_deg), math.radians(decl)

    cos_zen = math.sin(lat) * math.sin(dec) + math.cos(lat) * math.cos(dec) * math.cos(ha)
    elevation = 90.0 - math.degrees(math.acos(max(-1.0, min(1.0, cos_zen))))
    azimuth = (math.degrees(math.atan2(math.sin(ha),
                                       math.cos(ha) * math.sin(lat) - math.tan(dec) * math.cos(lat)))
               + 180.0) % 360.0
    if refraction:
        elevation += refraction_deg(elevation)
    return SunPosition(elevation_deg=elevation, azimuth_deg=azimuth)


def subsolar_point(timestamp_utc: datetime) -> tuple[float, float]:
    """(lat, lon) where the sun is overhead at this instant."""
    ts = _utc(timestamp_utc)
    decl, eot = _solar_terms(ts)
    minutes = ts.hour * 60 + ts.minute + (ts.second + ts.microsecond / 1e6) / 60.0
    lon = (720.0 - minutes - eot) / 4.0
    lon = (lon + 180.0) % 360.0 - 180.0
    return decl, lon
