import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aerotext.corpus import LabeledRecord, OperatorClass, SplitDataset


FIXTURE_CSV = """\
Operator,Summary
U.S. AIR FORCE,Engine caught fire during a routine training exercise over the base
Delta Air Lines,Hydraulic failure forced an emergency landing at the alternate airport
Private,Pilot lost directional control during landing rollout and exited the runway
American Airlines,Smoke detected in the cabin shortly after takeoff from the gate
U.S. Navy,Carrier approach waved off after arresting gear malfunction was reported
Private Owner,Fuel exhaustion led to a forced landing in a field short of the airport
United Airlines,Bird strike damaged the left engine on final approach to the runway
U.S. Army,Helicopter made a precautionary landing after chip light illuminated
Individual,Student pilot ground looped the tailwheel airplane during a crosswind landing
Southwest Airlines,Cabin pressurization issue prompted a rapid descent and diversion
Air National Guard,Tanker experienced a boom malfunction during refueling practice
Personal,Amateur built airplane suffered engine roughness and landed on a highway
FedEx,Cargo shifted in flight causing a center of gravity warning on departure
U.S. Marine Corps,Jet departed the prepared surface after landing long in wet conditions
Flying Club,Club airplane nosed over during a soft field landing practice session
"""


def synthetic_corpus(n_per_class: int = 20, extra_per_class: int = 2,
                     seed: int = 7, vocab_extra: int = 12,
                     doc_min: int = 4, doc_max: int = 9):
    """Keyword-separable 3-class corpus: every document carries its class
    keyword plus random filler tokens shared across classes."""
    rng = np.random.default_rng(seed)
    keywords = ["alpha", "bravo", "charlie"]
    filler = [f"word{i}" for i in range(vocab_extra)]

    def make_doc(cls: int) -> LabeledRecord:
        length = int(rng.integers(doc_min, doc_max + 1))
        tokens = [str(filler[int(rng.integers(len(filler)))]) for _ in range(length)]
        tokens.insert(int(rng.integers(len(tokens) + 1)), keywords[cls])
        return LabeledRecord(OperatorClass(cls), " ".join(tokens))

    train = [make_doc(c) for c in range(3) for _ in range(n_per_class)]
    validation = [make_doc(c) for c in range(3) for _ in range(extra_per_class)]
    test = [make_doc(c) for c in range(3) for _ in range(extra_per_class)]
    return SplitDataset(train, validation, test, seed)


@pytest.fixture
def fixture_csv(tmp_path):
    path = tmp_path / "records.csv"
    path.write_text(FIXTURE_CSV, encoding="utf-8")
    return path
