"""Rectangular edge zones on the shop floor and ray/zone crossing times."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Zone:
    zone_id: str
    x0: float
    y0: float
    x1: float
    y1: float
    capacity: int = 8

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def contains_closed(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


def grid_zones(cols: int, rows: int, width: float, height: float, capacity: int = 8) -> list[Zone]:
    """``cols x rows`` equal zones named ``z1``.. in row-major order."""
    zones = []
    dx, dy = width / cols, height / rows
    for r in range(rows):
        for c in range(cols):
            zones.append(Zone(f"z{r * cols + c + 1}", c * dx, r * dy, (c + 1) * dx, (r + 1) * dy,
                              capacity))
    return zones


def zone_at(zones, x: float, y: float) -> str | None:
    for z in zones:
        if z.contains(x, y):
            return z.zone_id
    # far floor edges are closed
    for z in zones:
        if z.contains_closed(x, y):
            return z.zone_id
    return None


def zone_changes(zones, p, v, t_max: float) -> list[tuple[float, str | None]]:
    """Times in ``(0, t_max]`` at which the ray ``p + v t`` changes zone,
    with the zone entered (None when leaving every zone)."""
    (x, y), (vx, vy) = p, v
    cands = set()
    for z in zones:
        if vx:
            for edge in (z.x0, z.x1):
                t = (edge - x) / vx
                if t > 0:
                    cands.add(t)
        if vy:
            for edge in (z.y0, z.y1):
                t = (edge - y) / vy
                if t > 0:
                    cands.add(t)
    times = sorted(cands)
    current = zone_at(zones, x, y)
    out = []
    for i, t in enumerate(times):
        if t > t_max:
            break
        probe = (t + times[i + 1]) / 2 if i + 1 < len(times) else t + 1.0
        zone = zone_at(zones, x + vx * probe, y + vy * probe)
        if zone != current:
            out.append((t, zone))
            current = zone
    return out
