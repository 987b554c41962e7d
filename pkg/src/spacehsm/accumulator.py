"""Append-only Merkle hash-tree accumulator.

Tree shape follows RFC 6962: leaves are hashed as ``SHA-256(0x00 || data)``,
interior nodes as ``SHA-256(0x01 || left || right)``, and a tree of ``n``
leaves splits at the largest power of two strictly less than ``n``.

The satellite and the terrestrial logs use the same code, so a monitor can
recompute the broadcast root from the public log byte for byte.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
DIGEST_SIZE = 32


class Digest(bytes):
    """A 32-byte SHA-256 output."""

    def __new__(cls, value: bytes = b"") -> "Digest":
        if len(value) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def __repr__(self) -> str:
        return f"Digest({self.hex()[:16]}...)"


def leaf_hash(data: bytes) -> Digest:
    return Digest(hashlib.sha256(LEAF_PREFIX + data).digest())


def node_hash(left: bytes, right: bytes) -> Digest:
    return Digest(hashlib.sha256(NODE_PREFIX + left + right).digest())


EMPTY_ROOT = Digest(hashlib.sha256(b"").digest())


def _split(n: int) -> int:
    """Largest power of two strictly less than ``n`` (n >= 2)."""
    return 1 << ((n - 1).bit_length() - 1)


def _subtree_root(hashes: Sequence[bytes]) -> Digest:
    n = len(hashes)
    if n == 1:
        return Digest(hashes[0])
    k = _split(n)
    return node_hash(_subtree_root(hashes[:k]), _subtree_root(hashes[k:]))


def _fold_frontier(frontier: Sequence[tuple[int, bytes]]) -> Digest:
    # frontier holds perfect-subtree roots, largest (leftmost) first
    acc = frontier[-1][1]
    for _, h in reversed(frontier[:-1]):
        acc = node_hash(h, acc)
    return Digest(acc)


@dataclass(frozen=True)
class MerkleLog:
    """Immutable append-only log; :func:`append` returns a new value.

    Besides the raw leaves it keeps every leaf hash (for proofs) and the
    frontier of perfect subtree roots, so the root is O(log n) to produce.
    """

    leaves: tuple[bytes, ...] = ()
    _hashes: tuple[Digest, ...] = field(default=(), repr=False, compare=False)
    _frontier: tuple[tuple[int, Digest], ...] = field(default=(), repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.leaves)

    def __len__(self) -> int:
        return len(self.leaves)

    @classmethod
    def from_leaves(cls, leaves: Iterable[bytes]) -> "MerkleLog":
        log = cls()
        for leaf in leaves:
            log = append(log, leaf)
        return log

    @property
    def leaf_hashes(self) -> tuple[Digest, ...]:
        return self._hashes


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    tree_size: int
    path: tuple[Digest, ...]

    def to_bytes(self) -> bytes:
        return _encode_proof(self.tree_size, self.leaf_index, self.path)

    @classmethod
    def from_bytes(cls, data: bytes) -> "InclusionProof":
        size, index, path = _decode_proof(data)
        return cls(leaf_index=index, tree_size=size, path=path)


@dataclass(frozen=True)
class ConsistencyProof:
    old_size: int
    new_size: int
    path: tuple[Digest, ...]

    def to_bytes(self) -> bytes:
        # the index slot carries old_size
        return _encode_proof(self.new_size, self.old_size, self.path)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConsistencyProof":
        size, old, path = _decode_proof(data)
        return cls(old_size=old, new_size=size, path=path)


_PROOF_HEADER = struct.Struct(">QQH")


def _encode_proof(tree_size: int, index: int, path: Sequence[bytes]) -> bytes:
    return _PROOF_HEADER.pack(tree_size, index, len(path)) + b"".join(path)


def _decode_proof(data: bytes) -> tuple[int, int, tuple[Digest, ...]]:
    if len(data) < _PROOF_HEADER.size:
        raise ValueError("truncated proof")
    size, index, count = _PROOF_HEADER.unpack_from(data)
    body = data[_PROOF_HEADER.size:]
    if len(body) != count * DIGEST_SIZE:
        raise ValueError("proof length does not match path count")
    path = tuple(Digest(body[i:i + DIGEST_SIZE]) for i in range(0, len(body), DIGEST_SIZE))
    return size, index, path


def append(log: MerkleLog, leaf: bytes) -> MerkleLog:
    h = leaf_hash(leaf)
    frontier = list(log._frontier)
    node, height = h, 0
    # merge equal-height subtrees, like binary carry propagation
    while frontier and frontier[-1][0] == height:
        _, left = frontier.pop()
        node = node_hash(left, node)
        height += 1
    frontier.append((height, node))
    return MerkleLog(
        leaves=log.leaves + (bytes(leaf),),
        _hashes=log._hashes + (h,),
        _frontier=tuple(frontier),
    )


def root(log: MerkleLog) -> Digest:
    if not log._frontier:
        return EMPTY_ROOT
    return _fold_frontier(log._frontier)


def prefix_root(log: MerkleLog, size: int) -> Digest:
    """Root of the first ``size`` leaves."""
    if not 0 <= size <= log.size:
        raise IndexError(f"prefix size {size} outside 0..{log.size}")
    if size == 0:
        return EMPTY_ROOT
    return _subtree_root(log._hashes[:size])


def _inclusion_path(index: int, hashes: Sequence[bytes]) -> list[Digest]:
    n = len(hashes)
    if n <= 1:
        return []
    k = _split(n)
    if index < k:
        return _inclusion_path(index, hashes[:k]) + [_subtree_root(hashes[k:])]
    return _inclusion_path(index - k, hashes[k:]) + [_subtree_root(hashes[:k])]


def prove_inclusion(log: MerkleLog, index: int, tree_size: int | None = None) -> InclusionProof:
    size = log.size if tree_size is None else tree_size
    if size > log.size:
        raise IndexError(f"tree size {size} exceeds log size {log.size}")
    if not 0 <= index < size:
        raise IndexError(f"leaf index {index} out of range for tree size {size}")
    path = _inclusion_path(index, log._hashes[:size])
    return InclusionProof(leaf_index=index, tree_size=size, path=tuple(path))


def verify_inclusion(root_digest: bytes, leaf: bytes, proof: InclusionProof,
                     tree_size: int | None = None) -> bool:
    """RFC 9162 inclusion check; malformed input yields False.

    The audit path does not authenticate the size fields: a path for a
    5-leaf tree can be shaped exactly like one for a 7-leaf tree. Pass the
    size that ``root_digest`` belongs to as ``tree_size`` whenever the proof
    comes from someone else.
    """
    try:
        index, size = int(proof.leaf_index), int(proof.tree_size)
        path = list(proof.path)
    except (TypeError, ValueError, AttributeError):
        return False
    if tree_size is not None and size != tree_size:
        return False
    if not 0 <= index < size or any(len(p) != DIGEST_SIZE for p in path):
        return False
    fn, sn = index, size - 1
    r = leaf_hash(leaf)
    for p in path:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            r = node_hash(p, r)
            if not fn & 1:
                while fn and not fn & 1:
                    fn >>= 1
                    sn >>= 1
        else:
            r = node_hash(r, p)
        fn >>= 1
        sn >>= 1
    return sn == 0 and r == root_digest


def _subproof(m: int, hashes: Sequence[bytes], complete: bool) -> list[Digest]:
    n = len(hashes)
    if m == n:
        return [] if complete else [_subtree_root(hashes)]
    k = _split(n)
    if m <= k:
        return _subproof(m, hashes[:k], complete) + [_subtree_root(hashes[k:])]
    return _subproof(m - k, hashes[k:], False) + [_subtree_root(hashes[:k])]


def prove_consistency(log: MerkleLog, old_size: int) -> ConsistencyProof:
    if not 0 < old_size <= log.size:
        raise IndexError(f"old size {old_size} outside 1..{log.size}")
    path = _subproof(old_size, log._hashes, True)
    return ConsistencyProof(old_size=old_size, new_size=log.size, path=tuple(path))


def verify_consistency(old_root: bytes, new_root: bytes, proof: ConsistencyProof,
                       old_size: int | None = None, new_size: int | None = None) -> bool:
    """RFC 9162 consistency check; malformed input yields False.

    As with :func:`verify_inclusion`, give the sizes the two roots belong to
    when the proof is untrusted.
    """
    try:
        m, n = int(proof.old_size), int(proof.new_size)
        path = list(proof.path)
    except (TypeError, ValueError, AttributeError):
        return False
    if (old_size is not None and m != old_size) or (new_size is not None and n != new_size):
        return False
    if not 0 < m <= n or any(len(p) != DIGEST_SIZE for p in path):
        return False
    if m == n:
        return not path and old_root == new_root
    if m & (m - 1) == 0:
        # old tree is a perfect subtree; its root is the implicit first node
        path = [bytes(old_root)] + path
    if not path:
        return False
    fn, sn = m - 1, n - 1
    while fn & 1:
        fn >>= 1
        sn >>= 1
    fr = sr = path[0]
    for c in path[1:]:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            fr = node_hash(c, fr)
            sr = node_hash(c, sr)
            if not fn & 1:
                while fn and not fn & 1:
                    fn >>= 1
                    sn >>= 1
        else:
            sr = node_hash(sr, c)
        fn >>= 1
        sn >>= 1
    return sn == 0 and fr == old_root and sr == new_root
