"""
Why streaming partial results beats one bulk transfer.

Each node first computes the partial product that belongs to its peer.
With ART the accelerator hands out results in chunks while it is still
computing, so the exchange hides behind the second, local product. The
alternative waits for the whole partial and sends it in a single put.
"""

from pgasim import RuntimeConfig, SegmentLayout, start
from pgasim.addressing import KiB
from pgasim.workloads import (assemble_matmul, matmul_segment_bytes, parallel_matmul,
                              random_matmul_inputs, serial_matmul_oracle)

size = 512
a, b = random_matmul_inputs(size)
cfg = RuntimeConfig(segments=SegmentLayout(matmul_segment_bytes(size), 64 * KiB))
want = serial_matmul_oracle(a, b)

for art in (True, False):
    with start(cfg) as rt:
        res = parallel_matmul(rt, size, a, b, art=art)
        ok = (assemble_matmul(res.outputs, size) == want).all()
        busy = {k: l.busy_cycles for k, l in rt.sim.links.items()}
    label = "streamed (ART)" if art else "single put"
    print(f"{label:<15} {res.cycles:>7} cycles  exact={ok}  link busy cycles {busy}")

# The gap is the transfer time that ART tucks under the local product.
