import hashlib
from itertools import combinations

import pytest
from hypothesis import given, strategies as st

from trbft.crypto import (
    AggregateSignature,
    DuplicateSigner,
    MixedDigest,
    SigningKey,
    UnknownSigner,
    CryptoError,
    aggregate,
    derive_secret,
    digest,
    partial_sign,
    verify_aggregate,
    verify_partial,
)


def keys(n):
    return {i: SigningKey(i, derive_secret("sig", 7, i)) for i in range(n)}


def test_digest_of_empty_input_is_sha256():
    # frozen value: SHA-256 of the empty string
    assert digest(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_digest_distinguishes_inputs():
    assert digest(b"a") != digest(b"b")
    assert digest(b"a") == hashlib.sha256(b"a").digest()


@given(st.binary(max_size=256))
def test_digest_deterministic(data):
    assert digest(data) == digest(data)
    assert len(digest(data)) == 32


def test_sign_verify_round_trip_and_binding():
    k = keys(1)[0]
    d = digest(b"m")
    sig = partial_sign(k, d)
    assert verify_partial(k.verifying_key(), d, sig)
    assert not verify_partial(k.verifying_key(), digest(b"other"), sig)


def test_three_node_cross_check():
    ks = keys(3)
    d = digest(b"block")
    for signer in ks:
        sig = partial_sign(ks[signer], d)
        for verifier in ks:
            assert verify_partial(ks[verifier].verifying_key(), d, sig) == (signer == verifier)


def test_aggregate_singleton_and_errors():
    ks = keys(2)
    d = digest(b"x")
    assert aggregate([partial_sign(ks[0], d)]).count_signers() == 1
    with pytest.raises(MixedDigest):
        aggregate([partial_sign(ks[0], d), partial_sign(ks[1], digest(b"y"))])
    with pytest.raises(DuplicateSigner):
        aggregate([partial_sign(ks[0], d), partial_sign(ks[0], d)])
    with pytest.raises(CryptoError):
        aggregate([])


def test_aggregate_counts_over_five_node_subsets():
    ks = keys(5)
    d = digest(b"x")
    for r in range(1, 6):
        for subset in combinations(range(5), r):
            agg = aggregate(partial_sign(ks[i], d) for i in subset)
            assert agg.count_signers() == r
            assert agg.signers == frozenset(subset)


def test_verify_aggregate_all_four_node_subsets():
    ks = keys(4)
    vks = {i: k.verifying_key() for i, k in ks.items()}
    d = digest(b"entry")
    for r in range(1, 5):
        for subset in combinations(range(4), r):
            agg = aggregate(partial_sign(ks[i], d) for i in subset)
            assert verify_aggregate(vks, d, agg)
            assert not verify_aggregate(vks, digest(b"wrong"), agg)
            # one forged tag spoils the whole aggregate
            signer, tag = agg.parts[0]
            forged = AggregateSignature(d, ((signer, bytes(32)),) + agg.parts[1:])
            assert not verify_aggregate(vks, d, forged)


def test_verify_aggregate_unknown_signer():
    ks = keys(3)
    d = digest(b"x")
    agg = aggregate(partial_sign(ks[i], d) for i in range(3))
    with pytest.raises(UnknownSigner):
        verify_aggregate({0: ks[0].verifying_key()}, d, agg)
