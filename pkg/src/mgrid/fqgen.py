"""Randomized query generation for oracle-based testing.

Queries are drawn against the value pools of an actual record set so a
useful fraction of constraints hit data; misses, NULL tests and LIKE
patterns are mixed in deliberately.
"""

from __future__ import annotations

import random

from mgrid.fq import COMPARISONS, Constraint, FormalQuery, SCHEMA_ATTRS, validate


def _value_pool(records: list[dict], attribute: str) -> list:
    return [r[attribute] for r in records if r.get(attribute) is not None]


def _random_value(rng: random.Random, attribute: str, records: list[dict]) -> str:
    pool = _value_pool(records, attribute)
    typ = SCHEMA_ATTRS[attribute][1]
    if pool and rng.random() < 0.8:
        value = rng.choice(pool)
        if typ is int and rng.random() < 0.3:
            value = int(value) + rng.choice([-1, 1])
        return str(value)
    return str(rng.randrange(1, 5000)) if typ is int else f"MISS{rng.randrange(1000)}"


def _random_constraint(rng: random.Random, records: list[dict]) -> Constraint:
    attribute = rng.choice(list(SCHEMA_ATTRS))
    conjunction = rng.choice(["and", "or"])
    roll = rng.random()
    if roll < 0.12:
        return Constraint(attribute, "NULL",
                          rng.choice(["EQUAL", "NOT_EQUAL"]), conjunction)
    if roll < 0.24:
        pool = _value_pool(records, attribute)
        base = str(rng.choice(pool)) if pool else "X"
        cut = rng.randrange(0, max(1, len(base)))
        pattern = rng.choice([base[:cut] + "%", "%" + base[cut:],
                              "%" + base[cut:cut + 3] + "%"])
        return Constraint(attribute, pattern or "%", "LIKE", conjunction)
    comparison = rng.choice([c for c in COMPARISONS if c != "LIKE"])
    return Constraint(attribute, _random_value(rng, attribute, records),
                      comparison, conjunction)


def random_fq(rng: random.Random, records: list[dict]) -> FormalQuery:
    constraints = [_random_constraint(rng, records)
                   for _ in range(rng.randint(1, 4))]
    order = []
    for attr in rng.sample(list(SCHEMA_ATTRS), rng.randint(0, 2)):
        order.append((attr, rng.choice(["ASC", "DESC"])))
    limit = offset = None
    if rng.random() < 0.5:
        limit = rng.randrange(0, max(2, len(records)))
        if rng.random() < 0.5:
            offset = rng.randrange(0, max(2, len(records) // 2))
    fq = FormalQuery(constraints=constraints, order=order, limit=limit,
                     offset=offset, no_data=rng.random() < 0.25)
    validate(fq)
    return fq
