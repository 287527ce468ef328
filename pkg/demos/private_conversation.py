"""Two users meet, agree on keys and talk; a relay path carries one
request without any single hop learning both ends.

    python3 demos/private_conversation.py
"""

import random

from swarmmsg import onion
from swarmmsg.crypto import RealCrypto
from swarmmsg.e2ee import Account

crypto = RealCrypto()
alice, bob = Account(crypto, display_name="alice"), Account(crypto, display_name="bob")

request = bob.receive(alice.create_friend_request(bob.pubkey, "hi, it's alice from the climbing gym"))
print(f"bob got a {request.kind} saying {request.request.intro!r}")
started = alice.receive(bob.accept(request.request, b"hey alice!"))
print(f"alice: {started.kind}, first words {started.plaintext!r}")

for text in (b"are we still on for saturday?", b"bring the spare rope"):
    print(f"bob reads {bob.receive(alice.encrypt(bob.pubkey, text)).plaintext!r}")
print(f"alice reads {alice.receive(bob.encrypt(alice.pubkey, b'yes, 9am')).plaintext!r}")

# a three hop request to a storage node
nodes = {f"n{i}": crypto.generate_keypair() for i in range(8)}
infos = [onion.NodeInfo(k, v.public) for k, v in nodes.items()]
path = onion.select_path(infos, random.Random(1))
destination = b"\x05" + crypto.generate_keypair().public
o = onion.wrap(crypto, path, destination, b'{"op": "retrieve"}')
blob, keys = o.blob, []
for hop in path.hops:
    layer = onion.peel(crypto, blob, nodes[hop.node_id])
    keys.append(layer.return_key)
    if isinstance(layer, onion.Forward):
        print(f"{hop.node_id} forwards {len(blob)} bytes to the next hop; it never sees the destination")
        blob = layer.inner
    else:
        print(f"{hop.node_id} is the exit: request {layer.request!r} for the storage node")
print("client reads the reply:", onion.respond(crypto, o, layer, keys, b'{"records": []}'))
