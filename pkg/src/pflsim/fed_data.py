"""Synthetic provider-grouped federation data.

The data model mirrors an invoice-processing federation: N clients, each
holding a disjoint set of provider groups, each group a set of labeled
records.  The toy task is multiclass classification with short string
answers so the ANLS metric is exercised end to end.

Non-i.i.d. structure comes from a per-provider offset added to the class
means: every provider shifts all of its records by its own Gaussian offset
scaled by ``heterogeneity``, so classes stay separable within a provider
while providers form distinct clusters.  An optional ``conditioning`` factor
applies geometrically spaced per-dimension scales followed by a fixed random
rotation, producing correlated, ill-conditioned features.

Every random draw comes from a stream keyed by the provider (or purpose), so
generation is a pure function of the configuration and seed, and removing
one provider leaves all other records bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .rng import stream

# Short invoice-field answer strings; some near pairs (total/subtotal,
# amount/account) keep ANLS strictly above plain accuracy on near misses.
LABEL_VOCAB = (
    "total",
    "subtotal",
    "amount",
    "account",
    "invoice",
    "address",
    "email",
    "phone",
    "vendor",
    "date",
    "balance",
    "payment",
    "discount",
    "shipping",
    "quantity",
    "reference",
)


def class_labels(n_classes: int) -> Tuple[str, ...]:
    """Answer vocabulary for ``n_classes`` classes."""
    if n_classes < 1:
        raise ConfigError(f"n_classes must be >= 1, got {n_classes}")
    labels = list(LABEL_VOCAB[:n_classes])
    labels += [f"field{i}" for i in range(len(labels), n_classes)]
    return tuple(labels)


@dataclass(frozen=True)
class Record:
    """One labeled example: feature vector plus its short string answer."""

    features: np.ndarray
    answer: str
    answer_id: int


@dataclass(frozen=True)
class ProviderGroup:
    """All records belonging to one provider (the unit of DP protection)."""

    provider_id: str
    records: Tuple[Record, ...]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class ClientDataset:
    client_id: int
    groups: Tuple[ProviderGroup, ...]

    def all_records(self) -> List[Record]:
        return [r for g in self.groups for r in g.records]

    @property
    def n_records(self) -> int:
        return sum(len(g) for g in self.groups)


@dataclass(frozen=True)
class FederatedDataset:
    clients: Tuple[ClientDataset, ...]
    validation: Tuple[Record, ...]
    seed: int
    feature_dim: int
    n_classes: int
    labels: Tuple[str, ...]

    @property
    def n_clients(self) -> int:
        return len(self.clients)


def min_group_count(ds: FederatedDataset) -> int:
    """Minimum number of provider groups held by any client."""
    return min(len(c.groups) for c in ds.clients)


def _provider_counts(providers_per_client, n_clients: int) -> List[int]:
    if isinstance(providers_per_client, int):
        counts = [providers_per_client] * n_clients
    else:
        counts = [int(c) for c in providers_per_client]
        if len(counts) != n_clients:
            raise ConfigError(
                f"providers_per_client has {len(counts)} entries for {n_clients} clients"
            )
    if any(c < 1 for c in counts):
        raise ConfigError("every client needs at least one provider")
    return counts


def _records_count(records_per_provider, rng) -> int:
    if isinstance(records_per_provider, int):
        count = records_per_provider
    else:
        lo, hi = records_per_provider
        count = int(rng.integers(int(lo), int(hi) + 1))
    if count < 1:
        raise ConfigError("every provider needs at least one record")
    return count


def generate_synthetic(
    n_clients: int = 10,
    providers_per_client=20,
    records_per_provider=30,
    feature_dim: int = 32,
    n_classes: int = 10,
    heterogeneity: float = 0.5,
    seed: int = 0,
    validation_size: int = 500,
    unseen_provider_fraction: float = 0.5,
    feature_noise: float = 0.5,
    class_separation: float = 2.0,
    conditioning: float = 1.0,
) -> FederatedDataset:
    """Deterministic non-i.i.d. federation with provider-grouped records.

    ``providers_per_client`` may be a single count or one count per client;
    ``records_per_provider`` a count or an inclusive ``(low, high)`` range.
    ``heterogeneity`` in [0, 1] scales the per-provider offsets (0 makes all
    providers statistically identical).  The validation split mixes records
    drawn from seen-provider offsets and from fresh unseen-provider offsets.
    """
    if n_clients < 1:
        raise ConfigError(f"n_clients must be >= 1, got {n_clients}")
    if not 0.0 <= heterogeneity <= 1.0:
        raise ConfigError(f"heterogeneity must be in [0, 1], got {heterogeneity}")
    if not 0.0 <= unseen_provider_fraction <= 1.0:
        raise ConfigError("unseen_provider_fraction must be in [0, 1]")
    if conditioning < 1.0:
        raise ConfigError(f"conditioning must be >= 1, got {conditioning}")
    counts = _provider_counts(providers_per_client, n_clients)
    labels = class_labels(n_classes)

    d = feature_dim
    means_rng = stream(seed, "class-means")
    means = np.empty((n_classes, d))
    for c in range(n_classes):
        g = means_rng.standard_normal(d)
        means[c] = class_separation * g / np.linalg.norm(g)

    if conditioning > 1.0:
        scales = conditioning ** (np.arange(d) / max(1, d - 1))
        scales /= np.sqrt(np.mean(scales**2))  # keep overall feature norm O(1)
        mix_q, _ = np.linalg.qr(stream(seed, "feature-mixing").standard_normal((d, d)))
    else:
        scales = None
        mix_q = None

    def finish(x: np.ndarray) -> np.ndarray:
        if scales is None:
            return x
        return mix_q @ (scales * x)

    def make_record(cls: int, offset: np.ndarray, rng) -> Record:
        x = means[cls] + offset + feature_noise * rng.standard_normal(d)
        return Record(features=finish(x), answer=labels[cls], answer_id=cls)

    offsets = {}
    clients = []
    for k in range(n_clients):
        groups = []
        for j in range(counts[k]):
            pid = f"c{k}-p{j}"
            offset = heterogeneity * stream(seed, "offset", pid).standard_normal(d)
            offsets[pid] = offset
            rec_rng = stream(seed, "records", pid)
            n_rec = _records_count(records_per_provider, rec_rng)
            records = tuple(
                make_record(int(rec_rng.integers(n_classes)), offset, rec_rng)
                for _ in range(n_rec)
            )
            groups.append(ProviderGroup(provider_id=pid, records=records))
        clients.append(ClientDataset(client_id=k, groups=tuple(groups)))

    val_rng = stream(seed, "validation")
    provider_ids = sorted(offsets)
    validation = []
    for _ in range(validation_size):
        if val_rng.random() < unseen_provider_fraction:
            offset = heterogeneity * val_rng.standard_normal(d)
        else:
            offset = offsets[provider_ids[int(val_rng.integers(len(provider_ids)))]]
        validation.append(make_record(int(val_rng.integers(n_classes)), offset, val_rng))

    return FederatedDataset(
        clients=tuple(clients),
        validation=tuple(validation),
        seed=seed,
        feature_dim=d,
        n_classes=n_classes,
        labels=labels,
    )


def without_provider(ds: FederatedDataset, client_id: int, provider_id: str) -> FederatedDataset:
    """Adjacent dataset with all records of one provider removed."""
    client = ds.clients[client_id]
    groups = tuple(g for g in client.groups if g.provider_id != provider_id)
    if len(groups) == len(client.groups):
        raise ConfigError(f"client {client_id} has no provider {provider_id!r}")
    if not groups:
        raise ConfigError("cannot remove a client's last provider group")
    clients = list(ds.clients)
    clients[client_id] = replace(client, groups=groups)
    return replace(ds, clients=tuple(clients))


# ---------------------------------------------------------------------------
# JSON-lines export / import
# ---------------------------------------------------------------------------


def _record_line(record: Record, client_id: Optional[int], provider_id: Optional[str]) -> str:
    return json.dumps(
        {
            "client_id": client_id,
            "provider_id": provider_id,
            "features": record.features.tolist(),
            "answer": record.answer,
            "answer_id": record.answer_id,
        },
        sort_keys=True,
    )


def to_jsonl(ds: FederatedDataset) -> str:
    """Serialize a dataset: one header line, then one JSON object per record.

    Validation records carry ``client_id: null``.  Feature floats round-trip
    exactly (repr-based JSON), so equal datasets serialize byte-identically.
    """
    lines = [
        json.dumps(
            {
                "kind": "pflsim-dataset",
                "version": 1,
                "seed": ds.seed,
                "feature_dim": ds.feature_dim,
                "n_classes": ds.n_classes,
                "labels": list(ds.labels),
            },
            sort_keys=True,
        )
    ]
    for client in ds.clients:
        for group in client.groups:
            for record in group.records:
                lines.append(_record_line(record, client.client_id, group.provider_id))
    for record in ds.validation:
        lines.append(_record_line(record, None, None))
    return "\n".join(lines) + "\n"


def write_jsonl(ds: FederatedDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(to_jsonl(ds))


def from_jsonl(text_or_path) -> FederatedDataset:
    """Parse a dataset serialized by to_jsonl (accepts text or a path)."""
    text = text_or_path
    if "\n" not in text_or_path:
        with open(text_or_path, "r", encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in text.split("\n") if ln]
    header = json.loads(lines[0])
    if header.get("kind") != "pflsim-dataset":
        raise ConfigError("not a pflsim dataset file")
    by_client = {}
    validation = []
    for ln in lines[1:]:
        obj = json.loads(ln)
        record = Record(
            features=np.array(obj["features"], dtype=np.float64),
            answer=obj["answer"],
            answer_id=int(obj["answer_id"]),
        )
        if obj["client_id"] is None:
            validation.append(record)
        else:
            by_client.setdefault(int(obj["client_id"]), {}).setdefault(
                obj["provider_id"], []
            ).append(record)
    clients = tuple(
        ClientDataset(
            client_id=cid,
            groups=tuple(
                ProviderGroup(provider_id=pid, records=tuple(records))
                for pid, records in groups.items()
            ),
        )
        for cid, groups in sorted(by_client.items())
    )
    return FederatedDataset(
        clients=clients,
        validation=tuple(validation),
        seed=int(header["seed"]),
        feature_dim=int(header["feature_dim"]),
        n_classes=int(header["n_classes"]),
        labels=tuple(header["labels"]),
    )
