"""Where does a message live, and what does it cost to put it there?

Builds a small swarm layout, maps a few recipients onto it, adds a swarm
to show that only neighbouring swarms lose keys, then mines and verifies
a stored envelope.

    python3 demos/ring_and_pow.py
"""

import random

from swarmmsg import pow as pow_
from swarmmsg.core import Envelope, encode_pubkey
from swarmmsg.ring import assign_pubkey, genesis, next_swarm_id

rng = random.Random(4)
reg = genesis([f"n{i:03d}" for i in range(35)], b"demo")
print("swarms at genesis:")
for sid in reg.ids():
    print(f"  {sid:>20}  {len(reg.swarms[sid])} members")

recipients = [rng.randbytes(32) for _ in range(6)]
before = {r: assign_pubkey(r, reg.ids()) for r in recipients}
new = next_swarm_id(reg.ids())
after = {r: assign_pubkey(r, reg.ids() + [new]) for r in recipients}
print(f"\nadding swarm {new}:")
for r in recipients:
    moved = "  (moved)" if before[r] != after[r] else ""
    print(f"  {encode_pubkey(r)[:18]}...  {before[r]:>20} -> {after[r]:>20}{moved}")

env = Envelope(recipients[0], ttl=86_400, timestamp=1_700_000_000_000, ciphertext=b"see you at noon")
for d in (1, 10, 100):
    threshold = pow_.compute_threshold(d, env.ttl, len(env.ciphertext))
    mined = pow_.mine_envelope(env, d)
    verdict = pow_.verify(mined, d, env.timestamp)
    print(f"\ndifficulty {d:>3}: threshold {threshold:#018x}, nonce {mined.nonce}, verify -> {verdict.reason}")
