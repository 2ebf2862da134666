"""
Bandwidth and latency of put/get versus transfer and packet size.

Prints the sweep as a table; pass ``--csv out.csv`` to keep the rows for
plotting elsewhere.
"""

import sys

from pgasim.bench import (PACKET_SIZES, bench_bandwidth, emit_csv, half_max_size,
                          latency_summary)

rows = bench_bandwidth("put") + bench_bandwidth("get")

sizes = sorted({r.transfer_size for r in rows})
table = {(r.op, r.packet_size, r.transfer_size): r.bandwidth_mbs for r in rows}
print(f"{'bytes':>8} " + " ".join(f"put/{p:<5}" for p in PACKET_SIZES) + "   get/512")
for n in sizes:
    cells = " ".join(f"{table['put', p, n]:9.1f}" for p in PACKET_SIZES)
    print(f"{n:>8} {cells} {table['get', 512, n]:9.1f}")

# Where does each curve reach half its plateau?
for p in PACKET_SIZES:
    put = [r for r in rows if r.op == "put" and r.packet_size == p]
    print(f"packet {p:>4} B: half of peak at {half_max_size(put)} B")

lat = latency_summary()
print("\nlatency (us):", ", ".join(f"{k} {v:.3f}" for k, v in lat.items()))

if "--csv" in sys.argv:
    emit_csv(rows, sys.argv[sys.argv.index("--csv") + 1])
