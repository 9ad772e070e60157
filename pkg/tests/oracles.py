"""Brute-force reference implementations kept independent of the package code paths."""

import math

R_KM = 6371.0
THRESHOLDS = (1.0, 25.0, 200.0, 750.0, 2500.0)


def chord_km(lat1, lon1, lat2, lon2):
    def unit(lat, lon):
        p, l = math.radians(lat), math.radians(lon)
        return (math.cos(p) * math.cos(l), math.cos(p) * math.sin(l), math.sin(p))

    u, v = unit(lat1, lon1), unit(lat2, lon2)
    c = math.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))
    return 2 * R_KM * math.asin(min(1.0, c / 2))


def plain_name(s):
    s = " ".join((s or "").lower().split())
    return None if s in ("", "unknown") else s


def brute_force_metrics(rows):
    """rows: dicts with pred/truth lat, lon, country, city. Returns (thresholds, city, country) percents."""
    n = len(rows)
    within = []
    for t in THRESHOLDS:
        hits = 0
        for r in rows:
            if chord_km(r["plat"], r["plon"], r["tlat"], r["tlon"]) <= t:
                hits += 1
        within.append(100.0 * hits / n)
    city = country = 0
    for r in rows:
        pc, tc = plain_name(r["pcountry"]), plain_name(r["tcountry"])
        pt, tt = plain_name(r["pcity"]), plain_name(r["tcity"])
        if pc is not None and pc == tc:
            country += 1
        if pt is not None and pt == tt:
            city += 1
    return tuple(within), 100.0 * city / n, 100.0 * country / n


def random_rows(rng, n):
    """Random predictions at log-uniform distances with noisy name spellings."""
    countries = ["France", "Japan", "Brazil", "Kenya", "Chile"]
    cities = ["Alpha", "Beta", "Gamma City", "Delta"]

    def spell(s):
        return rng.choice([s, s.upper(), s.lower(), f"  {s} ", s.replace(" ", "   ")])

    rows = []
    for _ in range(n):
        tlat, tlon = rng.uniform(-60, 60), rng.uniform(-180, 180)
        d = 10 ** rng.uniform(-1, 4.2)
        bearing = rng.uniform(0, 2 * math.pi)
        # destination point on the sphere at distance d
        delta = d / R_KM
        p1, l1 = math.radians(tlat), math.radians(tlon)
        p2 = math.asin(math.sin(p1) * math.cos(delta) + math.cos(p1) * math.sin(delta) * math.cos(bearing))
        l2 = l1 + math.atan2(math.sin(bearing) * math.sin(delta) * math.cos(p1), math.cos(delta) - math.sin(p1) * math.sin(p2))
        plon = (math.degrees(l2) + 180) % 360 - 180
        tc, tt = rng.choice(countries), rng.choice(cities)
        pc = spell(tc) if rng.random() < 0.6 else rng.choice(countries + ["Unknown", ""])
        pt = spell(tt) if rng.random() < 0.4 else rng.choice(cities + ["unknown"])
        rows.append(dict(tlat=tlat, tlon=tlon, plat=math.degrees(p2), plon=plon,
                         tcountry=tc, tcity=tt, pcountry=pc, pcity=pt))
    return rows
