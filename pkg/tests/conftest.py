import numpy as np
import pytest

from hbtm import Corpus, Token, Trace, synthetic_schema


def random_corpus(rng, num_traces=4, tokens_range=(3, 9), num_events=5,
                  num_time_bins=3, num_interaction_levels=2):
    """Small random but well-formed corpus for property tests."""
    schema = synthetic_schema(num_events, num_time_bins, num_interaction_levels)
    traces = []
    for m in range(num_traces):
        n = int(rng.integers(tokens_range[0], tokens_range[1] + 1))
        tokens = tuple(
            Token(
                int(rng.integers(num_events)),
                int(rng.integers(num_time_bins)),
                int(rng.integers(num_interaction_levels)),
            )
            for _ in range(n)
        )
        traces.append(Trace(f"t{m}", tokens))
    return Corpus(schema, tuple(traces))


@pytest.fixture
def rng():
    return np.random.default_rng(20240731)
