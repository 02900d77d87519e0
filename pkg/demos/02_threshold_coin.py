"""Deal a threshold coin, open shares and toss it from different share subsets.

Run: python3 demos/02_threshold_coin.py
"""

import itertools

from dagbft.coin import InsufficientSharesError, coin_combine, coin_deal, coin_extract_share, coin_verify_share
from dagbft.committee import make_committee

committee, keys = make_committee(7, seed=3)
k = committee.coin_threshold
payload = coin_deal(1, committee.n, k, b"demo-dealing", committee.encryption_keys)
print(f"N={committee.n}, threshold k={k}, {len(payload.commitments)} commitments")

for nonce in (4, 5, 6):
    shares = [coin_extract_share(payload, key.pid, key.decryption, nonce) for key in keys]
    assert all(coin_verify_share(payload.commitments, s) for s in shares)
    bits = {coin_combine(subset, nonce, k) for subset in itertools.combinations(shares, k)}
    print(f"nonce {nonce}: every {k}-subset gives {bits}")

try:
    coin_combine(shares[: k - 1], nonce, k)
except InsufficientSharesError as exc:
    print("too few shares:", exc)
