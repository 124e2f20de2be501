"""Writes the CSV files used by the bundled scenarios (deterministic)."""
import csv
import pathlib
import random

OUT = pathlib.Path(__file__).resolve().parent.parent / "scenarios" / "data"


def write(name, header, rows):
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / name, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# worked example database
write("count_r.csv", ["A", "B"], [("a1", "b1"), ("a1", "b2"), ("a2", "b3"), ("a3", "b4")])
write("count_s.csv", ["A", "C", "E"], [("a1", "c1", "e1"), ("a1", "c1", "e2"), ("a1", "c2", "e3"), ("a2", "c2", "e4")])
write("count_t.csv", ["C", "D"], [("c1", "d1"), ("c2", "d2"), ("c2", "d3"), ("c3", "d4")])

rng = random.Random(2024)

# q-hierarchical star: Orders(cust, order), Visits(cust, page)
write("star_orders.csv", ["cust", "ord"], [(rng.randrange(40), i) for i in range(600)])
write("star_visits.csv", ["cust", "page"], [(rng.randrange(40), rng.randrange(30)) for _ in range(600)])

# path with a bound middle: free-connex, not q-hierarchical
write("path_r.csv", ["A", "B"], sorted({(rng.randrange(30), rng.randrange(30)) for _ in range(300)}))
write("path_s.csv", ["B", "C"], sorted({(rng.randrange(30), rng.randrange(30)) for _ in range(300)}))

# triangle over a random graph
edges = sorted({(rng.randrange(60), rng.randrange(60)) for _ in range(500)})
write("tri_edges.csv", ["src", "dst"], edges)

# regression: y = 1.5 x - 2 z + 3 split over two relations joined on K
xs = [(k, rng.randint(-5, 5)) for k in range(80)]
write("reg_left.csv", ["K", "X"], xs)
rows = []
for k, x in xs:
    for _ in range(rng.randint(1, 2)):
        z = rng.randint(-5, 5)
        rows.append((k, z, 1.5 * x - 2 * z + 3))
write("reg_right.csv", ["K", "Z", "Y"], rows)

# chain-dependent categorical table
rows = []
for _ in range(500):
    a = rng.choice("pqr")
    b = a if rng.random() < 0.7 else rng.choice("pqr")
    c = b if rng.random() < 0.7 else rng.choice("pqr")
    d = rng.choice("xy")
    rows.append((a, b, c, d))
write("cl_table.csv", ["V1", "V2", "V3", "V4"], rows)

# matrix chain 12 x 12 x 12 x 12 with (i, j, value) entries
for m in (1, 2, 3):
    write(f"mcm_a{m}.csv", ["i", "j", "value"],
          [(i, j, round(rng.uniform(-1, 1), 3)) for i in range(12) for j in range(12)])

# inserts and deletes: later rows retract earlier ones
ins = [(rng.randrange(20), rng.randrange(20)) for _ in range(200)]
rows = [(a, b, 1) for a, b in ins] + [(a, b, -1) for a, b in ins[:80]]
write("churn_e.csv", ["A", "B", "sign"], rows)
write("churn_f.csv", ["B", "C"], sorted({(rng.randrange(20), rng.randrange(20)) for _ in range(150)}))
