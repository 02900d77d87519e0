import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagbft.coin import (
    Q,
    CoinError,
    CoinShare,
    FaultyDealerError,
    InsufficientSharesError,
    ShamirCoin,
    coin_combine,
    coin_deal,
    coin_extract_share,
    coin_verify_share,
    interpolate_at_zero,
    poly_eval,
)
from dagbft.committee import make_committee
from oracles import newton_value_at_zero, reference_coin_bit

COIN = ShamirCoin()


def _dealing(n, seed=b"s", dealer=1, committee_seed=3):
    committee, keys = make_committee(n, committee_seed)
    payload = coin_deal(dealer, n, committee.coin_threshold, seed, committee.encryption_keys)
    return committee, keys, payload


def _shares(payload, keys, nonce):
    return [coin_extract_share(payload, k.pid, k.decryption, nonce) for k in keys]


def test_deal_shape():
    committee, keys, payload = _dealing(4)
    assert len(payload.encrypted_shares) == 4
    assert len(payload.commitments) == 3
    assert payload.dealer == 1


def test_deal_is_deterministic():
    committee, keys, a = _dealing(4, b"same")
    _, _, b = _dealing(4, b"same")
    assert a == b


def test_deal_rejects_bad_threshold():
    committee, _ = make_committee(4, 0)
    with pytest.raises(ValueError):
        coin_deal(1, 4, 5, b"s", committee.encryption_keys)


def test_every_honest_share_verifies():
    committee, keys, payload = _dealing(7)
    for share in _shares(payload, keys, 9):
        assert (share.dealer, share.nonce) == (1, 9)
        assert coin_verify_share(payload.commitments, share)


def test_extract_share_fields():
    committee, keys, payload = _dealing(4)
    share = coin_extract_share(payload, 2, keys[1].decryption, 7)
    assert (share.dealer, share.holder, share.nonce) == (1, 2, 7)
    assert coin_verify_share(payload.commitments, share)


def test_tampered_ciphertext_is_detected():
    committee, keys, payload = _dealing(4)
    cts = list(payload.encrypted_shares)
    blob = bytearray(cts[1])
    blob[40] ^= 0x01
    cts[1] = bytes(blob)
    bad = type(payload)(payload.dealer, payload.commitments, tuple(cts))
    with pytest.raises(FaultyDealerError):
        coin_extract_share(bad, 2, keys[1].decryption, 7)
    raw = COIN.open(bad, 2, keys[1].decryption)
    assert not COIN.verify_value(bad.commitments, 2, raw)
    # other holders are unaffected
    assert coin_verify_share(bad.commitments, coin_extract_share(bad, 3, keys[2].decryption, 7))


def test_wrong_key_cannot_open():
    committee, keys, payload = _dealing(4)
    with pytest.raises(FaultyDealerError):
        coin_extract_share(payload, 2, keys[2].decryption, 1)


def test_verify_rejects_modified_shares():
    committee, keys, payload = _dealing(4)
    share = coin_extract_share(payload, 2, keys[1].decryption, 7)
    bumped = CoinShare(share.dealer, share.holder, share.nonce, (share.value + 1) % Q)
    swapped = CoinShare(share.dealer, 3, share.nonce, share.value)
    assert not coin_verify_share(payload.commitments, bumped)
    assert not coin_verify_share(payload.commitments, swapped)


def test_threshold_consistency_exhaustive_n4():
    committee, keys, payload = _dealing(4)
    for nonce in range(1, 8):
        shares = _shares(payload, keys, nonce)
        bits = {coin_combine(subset, nonce, 3) for subset in itertools.combinations(shares, 3)}
        assert len(bits) == 1
        assert coin_combine([shares[0], shares[1], shares[2]], nonce, 3) == coin_combine([shares[1], shares[2], shares[3]], nonce, 3)


@pytest.mark.parametrize("n", [5, 6])
def test_threshold_consistency_exhaustive_small(n):
    committee, keys, payload = _dealing(n, b"x%d" % n)
    k = committee.coin_threshold
    shares = _shares(payload, keys, 4)
    assert len({coin_combine(s, 4, k) for s in itertools.combinations(shares, k)}) == 1


def test_too_few_shares():
    committee, keys, payload = _dealing(4)
    shares = _shares(payload, keys, 2)
    with pytest.raises(InsufficientSharesError):
        coin_combine(shares[:2], 2, 3)


def test_mixed_inputs_rejected():
    committee, keys, payload = _dealing(4)
    a = _shares(payload, keys, 2)
    b = _shares(payload, keys, 3)
    with pytest.raises(CoinError):
        coin_combine([a[0], a[1], b[2]], 2, 3)
    with pytest.raises(CoinError):
        coin_combine([a[0], a[0], a[1]], 2, 3)
    _, _, other = _dealing(4, dealer=2)
    c = coin_extract_share(other, 3, keys[2].decryption, 2)
    with pytest.raises(CoinError):
        coin_combine([a[0], a[1], c], 2, 3)


def test_pinned_bit_sequence(golden):
    vec = golden["coin"]
    committee, keys = make_committee(vec["n"], vec["committee_seed"])
    payload = COIN.deal(vec["dealer"], vec["n"], vec["k"], bytes.fromhex(vec["dealing_seed"]), committee.encryption_keys)
    for nonce, bit in vec["bits"].items():
        shares = _shares(payload, keys, int(nonce))
        assert coin_combine(shares, int(nonce), vec["k"]) == bit


def test_combine_matches_newton_interpolation():
    committee, keys, payload = _dealing(7, b"newton")
    shares = _shares(payload, keys, 11)
    secret = newton_value_at_zero([(s.holder, s.value) for s in shares], Q)
    assert coin_combine(shares[2:], 11, 5) == reference_coin_bit(1, secret, 11)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=Q - 1), min_size=1, max_size=6), st.data())
def test_interpolation_recovers_constant_term(coeffs, data):
    k = len(coeffs)
    xs = data.draw(st.lists(st.integers(min_value=1, max_value=50), min_size=k, max_size=k, unique=True))
    points = [(x, poly_eval(coeffs, x)) for x in xs]
    assert interpolate_at_zero(points) == coeffs[0]
    assert newton_value_at_zero(points, Q) == coeffs[0]
