"""Simulated tamper-proof USIG counter service and remote attestation.

Protocol code reaches a node's counter only through its :class:`Enclave`
handle. Fault scripts rewrite protocol state, never the enclave, so a
Byzantine node still cannot reuse or skip counter values.
"""
from __future__ import annotations

import hmac
from dataclasses import dataclass, field

from .crypto import digest, mac


class NoTee(Exception):
    """Raised when a node without a TEE is asked to attest."""


@dataclass(frozen=True)
class UI:
    issuer: int
    cv: int
    cert: bytes


@dataclass(frozen=True)
class AttestationClaim:
    has_tee: bool
    log_hash: bytes


@dataclass(frozen=True)
class Attestation:
    subject: int
    nonce: bytes
    claim: AttestationClaim
    cert: bytes


@dataclass
class UsigState:
    node_id: int
    secret: bytes
    counter: int = 0


def _ui_payload(issuer: int, cv: int, message: bytes) -> bytes:
    return b"UI" + issuer.to_bytes(8, "big") + cv.to_bytes(8, "big") + digest(message)


def _attest_payload(subject: int, nonce: bytes, claim: AttestationClaim) -> bytes:
    return (
        b"ATT"
        + subject.to_bytes(8, "big")
        + len(nonce).to_bytes(4, "big")
        + nonce
        + (b"\x01" if claim.has_tee else b"\x00")
        + claim.log_hash
    )


def create_ui(state: UsigState, message: bytes) -> UI:
    state.counter += 1
    cv = state.counter
    return UI(state.node_id, cv, mac(state.secret, _ui_payload(state.node_id, cv, message)))


def check_ui(issuer_secret: bytes, ui: UI, message: bytes) -> bool:
    expected = mac(issuer_secret, _ui_payload(ui.issuer, ui.cv, message))
    return ui.cv >= 1 and hmac.compare_digest(expected, ui.cert)


def attest(subject: int, attest_secret: bytes, has_tee: bool, nonce: bytes, claim: AttestationClaim) -> Attestation:
    if not has_tee:
        raise NoTee(f"node {subject} has no trusted execution environment")
    return Attestation(subject, nonce, claim, mac(attest_secret, _attest_payload(subject, nonce, claim)))


def verify_attestation(attest_secret: bytes, att: Attestation, nonce: bytes) -> bool:
    if att.nonce != nonce:
        return False
    expected = mac(attest_secret, _attest_payload(att.subject, att.nonce, att.claim))
    return hmac.compare_digest(expected, att.cert)


class Enclave:
    """Per-node TEE handle: the only path to the node's UsigState."""

    def __init__(self, node_id: int, usig_secret: bytes, attest_secret: bytes, has_tee: bool = True):
        self.node_id = node_id
        self.has_tee = has_tee
        self.__state = UsigState(node_id, usig_secret)
        self.__attest_secret = attest_secret

    @property
    def counter(self) -> int:
        return self.__state.counter

    def create_ui(self, message: bytes) -> UI:
        return create_ui(self.__state, message)

    def attest(self, nonce: bytes, claim: AttestationClaim) -> Attestation:
        return attest(self.node_id, self.__attest_secret, self.has_tee, nonce, claim)

    def __deepcopy__(self, memo):
        # Interleaving exploration snapshots whole worlds; a snapshot must carry
        # an independent counter or branches would share USIG state.
        clone = Enclave.__new__(Enclave)
        clone.node_id = self.node_id
        clone.has_tee = self.has_tee
        clone._Enclave__state = UsigState(self.node_id, self.__state.secret, self.__state.counter)
        clone._Enclave__attest_secret = self.__attest_secret
        memo[id(self)] = clone
        return clone


@dataclass
class TrustRegistry:
    """Verification material for every node, installed before startup."""

    usig: dict = field(default_factory=dict)
    attestation: dict = field(default_factory=dict)

    def check_ui(self, ui: UI, message: bytes) -> bool:
        secret = self.usig.get(ui.issuer)
        return secret is not None and check_ui(secret, ui, message)

    def verify_attestation(self, att: Attestation, nonce: bytes) -> bool:
        secret = self.attestation.get(att.subject)
        return secret is not None and verify_attestation(secret, att, nonce)
