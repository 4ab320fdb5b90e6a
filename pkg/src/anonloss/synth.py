"""Seeded synthetic microdata for desk-scale experiments.

The generated population mixes categorical and continuous columns, makes
small known-attribute combinations mostly unique, and ties the sensitive
``condition`` column only loosely to other attributes, so a non-member
predictor does noticeably better than chance but far from perfect.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .dataset import TabularDataset, infer_schema

CONDITIONS = ("asthma", "diabetes", "healthy", "hypertension", "migraine", "arthritis")
EDUCATION = ("primary", "secondary", "vocational", "bachelor", "master", "doctorate")


def make_population(n_rows: int = 3000, seed: int = 0, n_zip: int = 60, signal: float = 0.35) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    age = rng.integers(18, 90, size=n_rows)
    sex = rng.choice(["F", "M"], size=n_rows)
    zipcode = np.array([f"Z{z:03d}" for z in rng.integers(0, n_zip, size=n_rows)])
    edu_idx = np.clip(rng.normal(2.5 + (age < 35) * 0.5, 1.3, size=n_rows).round(), 0, 5).astype(int)
    education = np.array(EDUCATION)[edu_idx]
    job = np.array([f"J{j:02d}" for j in (edu_idx * 2 + rng.integers(0, 4, size=n_rows)) % 12])
    income = np.round(np.exp(rng.normal(10 + 0.15 * edu_idx, 0.4, size=n_rows)), -2)
    band = np.minimum((age - 18) // 12, 5)
    linked = (band * 2 + (sex == "M")) % len(CONDITIONS)
    random_pick = rng.integers(0, len(CONDITIONS), size=n_rows)
    use_link = rng.random(n_rows) < signal
    condition = np.array(CONDITIONS)[np.where(use_link, linked, random_pick)]
    return pd.DataFrame({
        "age": age.astype(np.int64),
        "sex": sex.astype(object),
        "zip": zipcode.astype(object),
        "education": education.astype(object),
        "job": job.astype(object),
        "income": income.astype(float),
        "condition": condition.astype(object),
    })


def make_dataset(n_rows: int = 3000, seed: int = 0, **kwargs) -> TabularDataset:
    frame = make_population(n_rows, seed, **kwargs)
    return TabularDataset(frame, infer_schema(frame))
