"""
A walk through the one-sided operations on a two-node ring.

Run with ``python demos/put_get_tour.py``. Everything below happens in
simulated time; the printed trace shows where each cycle goes.
"""

import numpy as np

from pgasim import GlobalAddress, Region, start

rt = start()

# Node 0 writes a small vector into its own shared segment, then pushes it
# to node 1. The put handle completes once the last packet leaves node 0.
vec = np.arange(16, dtype=np.int32)
rt.host_write(0, Region.SHARED, 0, vec)
h = rt.put(0, GlobalAddress(1, 0x100), 0, vec.nbytes)
print("after submit:", rt.poll(h))
rt.wait(h)
print("put injected at cycle", rt.done_time(h))
rt.run_until_idle()
print("node 1 now holds", np.frombuffer(rt.host_read(1, Region.SHARED, 0x100, vec.nbytes), np.int32))

# A get is a short request out and a long reply back; it completes when
# the reply payload has been written locally.
mark = len(rt.sim.trace)
rt.wait(rt.get(0, GlobalAddress(1, 0x100), vec.nbytes, 4096))
print("\ntrace of one get:")
for ev in rt.sim.trace[mark:]:
    if ev.kind in ("send", "pkt_arrive", "handler_end", "complete"):
        print(f"  t={ev.time:4d} node {ev.node} {ev.kind:<12} {ev.info}")

# User handlers live at opcodes 0x80 and up. This one answers with the
# sum of the medium payload it received.
def total(ctx):
    region, off, n = ctx.payload_ref
    s = int(ctx.memory.view(region, off, n // 4, np.int32).sum())
    ctx.reply_short(0x81, (s,))

answers = []
rt.register_handler(1, 0x80, total)
rt.register_handler(0, 0x81, lambda ctx: answers.append((rt.now, ctx.args[0])))
rt.am_request_medium(0, 1, 0x80, payload=vec.tobytes())
rt.run_until_idle()
print("\nremote sum:", answers[0][1], "at cycle", answers[0][0])

end = rt.barrier()
print(f"barrier released at cycle {end} = {rt.sim.cycles_to_us(end):.3f} us")
rt.close()
