"""Digests, per-node signing keys and an aggregatable multi-signature.

The reference backend tags each partial signature with HMAC-SHA256 keyed by
the signer's secret. An aggregate is the signer set plus every partial tag,
so verification semantics match an aggregatable scheme: unforgeable without
the secret, countable, and order independent.
"""
from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Iterable, Mapping

DIGEST_ALGORITHM = "sha256"
DIGEST_SIZE = 32


class CryptoError(Exception):
    pass


class MixedDigest(CryptoError):
    pass


class DuplicateSigner(CryptoError):
    pass


class UnknownSigner(CryptoError):
    pass


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def mac(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def derive_secret(label: str, seed: int, ident: int) -> bytes:
    """Deterministic per-node secret for simulated key installation."""
    return digest(f"{label}|{seed}|{ident}".encode())


@dataclass(frozen=True)
class SigningKey:
    node_id: int
    secret: bytes

    def verifying_key(self) -> "VerifyingKey":
        return VerifyingKey(self.node_id, self.secret)


@dataclass(frozen=True)
class VerifyingKey:
    # HMAC backend: verification material equals the signing secret, held only
    # by the verification oracle.
    node_id: int
    material: bytes


@dataclass(frozen=True)
class PartialSignature:
    signer: int
    digest: bytes
    tag: bytes


@dataclass(frozen=True)
class AggregateSignature:
    digest: bytes
    parts: tuple  # ((signer, tag), ...) sorted by signer

    @property
    def signers(self) -> frozenset:
        return frozenset(s for s, _ in self.parts)

    def count_signers(self) -> int:
        return len(self.parts)


def _tag(secret: bytes, node_id: int, d: bytes) -> bytes:
    return mac(secret, d + node_id.to_bytes(8, "big"))


def partial_sign(key: SigningKey, d: bytes) -> PartialSignature:
    return PartialSignature(key.node_id, d, _tag(key.secret, key.node_id, d))


def verify_partial(vk: VerifyingKey, d: bytes, sig: PartialSignature) -> bool:
    if sig.signer != vk.node_id or sig.digest != d:
        return False
    return hmac.compare_digest(sig.tag, _tag(vk.material, vk.node_id, d))


def aggregate(parts: Iterable[PartialSignature]) -> AggregateSignature:
    parts = list(parts)
    if not parts:
        raise CryptoError("cannot aggregate an empty set of partial signatures")
    d = parts[0].digest
    seen = {}
    for p in parts:
        if p.digest != d:
            raise MixedDigest(f"signer {p.signer} signed a different digest")
        if p.signer in seen:
            raise DuplicateSigner(f"signer {p.signer} appears twice")
        seen[p.signer] = p.tag
    return AggregateSignature(d, tuple(sorted(seen.items())))


def verify_aggregate(keys: Mapping[int, VerifyingKey], d: bytes, agg: AggregateSignature) -> bool:
    """True iff every contributing partial verifies for ``d``.

    Raises UnknownSigner when a signer has no registered key.
    """
    for signer, _ in agg.parts:
        if signer not in keys:
            raise UnknownSigner(f"no verifying key for node {signer}")
    if agg.digest != d or not agg.parts:
        return False
    return all(
        verify_partial(keys[s], d, PartialSignature(s, d, tag)) for s, tag in agg.parts
    )
