"""Build a small DAG in lock-step and look at levels, prime units and prime ancestors.

Run: python3 demos/01_poset_basics.py
"""

from dagbft.fixtures import lockstep

cores, states = lockstep(4, rounds=6, seed=1)
view = cores[0].view
print(f"{len(view)} units, max level {view.max_level}")

# each level has one prime unit per creator in a lock-step run
for level in range(view.max_level + 1):
    primes = view.prime_units_at(level)
    print(f"level {level}: primes by {sorted(p.creator for p in primes)}")

# prime ancestors of a top prime: the primes one level down it is high above
top = view.prime_units_at(view.max_level)[0]
down = view.prime_ancestors(top)
print(f"prime {top.digest.hex()[:12]} (creator {top.creator}) has {len(down)} prime ancestors")
print("supermajority threshold:", view.supermajority)
