#!/usr/bin/env python3
"""Regenerate the synthetic fixture CSVs in this directory.

Each group gets a handful of sub-national units plus a national series
(unit_id equal to group_id). Curves are logistic epidemics with Poisson
noise; a few units report only one kind, and some daily series carry
downward corrections. Output is deterministic.
"""

import csv
import datetime as dt
import math
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
END = dt.date(2020, 5, 11)


def poisson(rng, lam):
    if lam <= 0:
        return 0
    if lam < 30:
        limit, k, prod = math.exp(-lam), 0, rng.random()
        while prod > limit:
            k += 1
            prod *= rng.random()
        return k
    return max(0, round(rng.gauss(lam, math.sqrt(lam))))


def epidemic(rng, days, final, midpoint, width, plateau_after=None):
    """Daily counts from a noisy logistic curve."""
    expected = [final / (1 + math.exp(-(t - midpoint) / width)) for t in range(days + 1)]
    daily = []
    for t in range(1, days + 1):
        lam = expected[t] - expected[t - 1]
        if plateau_after is not None and t > plateau_after:
            lam *= 0.02
        daily.append(poisson(rng, lam * rng.lognormvariate(0, 0.25)))
    return daily


def corrections(rng, daily, rate):
    out = list(daily)
    for t in range(5, len(out)):
        if rng.random() < rate:
            out[t] = -rng.randint(1, max(1, out[t - 1] // 4 + 1))
    return out


def running(daily):
    total, out = 0, []
    for v in daily:
        total += v
        out.append(total)
    return out


def rows_for(unit, group, start, cases, deaths):
    rows = []
    for measure, daily in (("cases", cases), ("deaths", deaths)):
        cum = running(daily)
        for t, (d, c) in enumerate(zip(daily, cum)):
            date = (start + dt.timedelta(days=t)).isoformat()
            rows.append((unit, group, date, measure, "daily", d))
            rows.append((unit, group, date, measure, "cumulative", c))
    return rows


def unit_rows(rng, unit, group, start, final_cases, fatality, midpoint, width,
              correction_rate=0.0, plateau_after=None):
    days = (END - start).days + 1
    cases = epidemic(rng, days, final_cases, midpoint, width, plateau_after)
    deaths = epidemic(rng, days, final_cases * fatality, midpoint + 7, width, plateau_after)
    if correction_rate:
        cases = corrections(rng, cases, correction_rate)
        deaths = corrections(rng, deaths, correction_rate)
    return rows_for(unit, group, start, cases, deaths)


def keep(rows, kinds):
    return [r for r in rows if r[4] in kinds]


def national(rows, group, start):
    """National series as the sum of the group's units, from `start`."""
    totals = {}
    for unit, g, date, measure, kind, value in rows:
        if g == group and kind == "daily":
            totals[(date, measure)] = totals.get((date, measure), 0) + value
    out = []
    for measure in ("cases", "deaths"):
        cum = 0
        day = start
        while day <= END:
            v = totals.get((day.isoformat(), measure), 0)
            cum += v
            out.append((group, group, day.isoformat(), measure, "daily", v))
            out.append((group, group, day.isoformat(), measure, "cumulative", cum))
            day += dt.timedelta(days=1)
    return out


def china(rng):
    start = dt.date(2019, 12, 31)
    rows = []
    # Wuhan deaths stall between 2000 and 3000 from late February on
    rows += unit_rows(rng, "Wuhan", "China", start, 50000, 0.05, 40, 5.0, plateau_after=56)
    rows += unit_rows(rng, "Xiaogan", "China", start, 3500, 0.036, 38, 4.5)
    rows += unit_rows(rng, "Huanggang", "China", start, 2900, 0.043, 37, 4.5)
    rows += unit_rows(rng, "China-rest", "China", start, 26000, 0.02, 36, 5.5)
    rows += national(rows, "China", start)
    return keep(rows, ("cumulative",))


def western(rng, group, start, units, national_start):
    reported, everything = [], []
    for i, (unit, final, fatality) in enumerate(units):
        kinds = ("daily", "cumulative")
        if i % 5 == 3:
            kinds = ("daily",)
        elif i % 5 == 4:
            kinds = ("cumulative",)
        rows = unit_rows(rng, unit, group, start, final, fatality,
                         rng.uniform(30, 55), rng.uniform(5, 9),
                         correction_rate=0.03 if i % 3 == 0 else 0.0)
        everything += rows
        reported += keep(rows, kinds)
    return reported + national(everything, group, national_start)


def main():
    rng = random.Random(20200511)
    groups = {
        "china": china(rng),
        "canada": western(rng, "Canada", dt.date(2020, 2, 1), [
            ("Quebec", 38000, 0.08), ("Ontario", 21000, 0.08), ("Alberta", 6000, 0.02),
            ("British Columbia", 2400, 0.05), ("Nova Scotia", 1000, 0.05),
            ("Saskatchewan", 580, 0.01), ("Manitoba", 290, 0.02),
            ("Newfoundland", 260, 0.01), ("New Brunswick", 120, 0.002),
        ], dt.date(2020, 2, 1)),
        "usa": western(rng, "USA", dt.date(2020, 2, 29), [
            ("New York", 340000, 0.08), ("New Jersey", 140000, 0.07), ("Massachusetts", 79000, 0.06),
            ("Illinois", 80000, 0.045), ("California", 70000, 0.04), ("Pennsylvania", 58000, 0.07),
            ("Michigan", 48000, 0.095), ("Florida", 41000, 0.04), ("Texas", 40000, 0.028),
            ("Georgia", 34000, 0.043), ("Louisiana", 32000, 0.072), ("Washington", 17000, 0.055),
            ("Oregon", 3300, 0.04), ("Utah", 6700, 0.01), ("Vermont", 920, 0.06),
        ], dt.date(2019, 12, 31)),
        "france": western(rng, "France", dt.date(2020, 3, 18), [
            ("Ile-de-France", 38000, 0.17), ("Grand Est", 15000, 0.2),
            ("Auvergne-Rhone-Alpes", 9500, 0.16), ("Hauts-de-France", 7800, 0.19),
            ("Provence-Alpes-Cote d'Azur", 6000, 0.14), ("Bourgogne-Franche-Comte", 4000, 0.2),
            ("Occitanie", 3000, 0.14), ("Nouvelle-Aquitaine", 2000, 0.15),
            ("Bretagne", 1100, 0.14), ("Corse", 300, 0.18),
        ], dt.date(2019, 12, 31)),
    }
    for name, rows in groups.items():
        with open(HERE / f"{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["unit_id", "group_id", "date", "measure", "kind", "value"])
            writer.writerows(rows)


if __name__ == "__main__":
    main()
