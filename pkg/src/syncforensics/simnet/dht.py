"""A small Kademlia-style DHT.

Nodes hold direct references to each other, so a "query" is a method call.
Stored values are full peer entries rather than bare endpoints.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..errors import NoRoute, WrongWidth
from ..wire import Endpoint

ID_LEN = 20
ID_BITS = ID_LEN * 8
DEFAULT_K = 8
ALPHA = 3


def dht_xor_distance(a: bytes, b: bytes) -> int:
    if len(a) != ID_LEN or len(b) != ID_LEN:
        raise WrongWidth(f"DHT ids are {ID_LEN} bytes, got {len(a)} and {len(b)}")
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


@dataclass(eq=False)
class DhtNode:
    node_id: bytes
    endpoint: Optional[Endpoint] = None
    k: int = DEFAULT_K
    buckets: list = field(default_factory=lambda: [[] for _ in range(ID_BITS)])
    stored_values: dict = field(default_factory=dict)

    def bucket_index(self, other_id: bytes) -> int:
        return dht_xor_distance(self.node_id, other_id).bit_length() - 1

    def add_contact(self, node: "DhtNode") -> bool:
        if node.node_id == self.node_id:
            return False
        bucket = self.buckets[self.bucket_index(node.node_id)]
        if node in bucket:
            return True
        if len(bucket) >= self.k:
            return False
        bucket.append(node)
        return True

    def contacts(self) -> list:
        return [n for b in self.buckets for n in b]

    def closest_known(self, target: bytes, count: int) -> list:
        nodes = self.contacts() + [self]
        nodes.sort(key=lambda n: dht_xor_distance(n.node_id, target))
        return nodes[:count]

    def store(self, target: bytes, value) -> None:
        values = self.stored_values.setdefault(target, [])
        if value not in values:
            values.append(value)


def dht_find_closest(bootstrap: Iterable[DhtNode], target: bytes, k: int = DEFAULT_K,
                     alpha: int = ALPHA) -> list:
    """Iterative node lookup; returns the k closest nodes reached, nearest first."""
    seen = {}
    for node in bootstrap:
        seen[node.node_id] = node
    if not seen:
        raise ValueError("lookup needs at least one bootstrap node")
    queried = set()

    def dist(n):
        return dht_xor_distance(n.node_id, target)

    while True:
        shortlist = sorted(seen.values(), key=dist)[:k]
        pending = [n for n in shortlist if n.node_id not in queried][:alpha]
        if not pending:
            return shortlist
        for node in pending:
            queried.add(node.node_id)
            for contact in node.closest_known(target, k):
                seen.setdefault(contact.node_id, contact)


def dht_lookup(bootstrap: Iterable[DhtNode], target: bytes, k: int = DEFAULT_K) -> list:
    """Values stored for ``target`` at the closest nodes found."""
    values = []
    for node in dht_find_closest(bootstrap, target, k):
        for v in node.stored_values.get(target, ()):
            if v not in values:
                values.append(v)
    if not values:
        raise NoRoute(f"no node near {target.hex()} stores peers")
    return values


def dht_announce(bootstrap: Iterable[DhtNode], target: bytes, value, k: int = DEFAULT_K) -> list:
    nodes = dht_find_closest(bootstrap, target, k)
    for node in nodes:
        node.store(target, value)
    return nodes


def build_dht(count: int, rng: random.Random, k: int = DEFAULT_K,
              base_ip: str = "10.200.0.0") -> list:
    """``count`` nodes with random ids; each learns the others in random order."""
    base = int.from_bytes(bytes(map(int, base_ip.split("."))), "big")
    nodes = []
    for i in range(count):
        ip = ".".join(str(b) for b in (base + i + 1).to_bytes(4, "big"))
        nodes.append(DhtNode(rng.randbytes(ID_LEN), Endpoint(ip, 6881), k))
    for node in nodes:
        others = [n for n in nodes if n is not node]
        rng.shuffle(others)
        for other in others:
            node.add_contact(other)
    return nodes
