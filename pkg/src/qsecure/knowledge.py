"""Knowledge databases kept by the cloud supplier.

``uhdr`` holds user history (profile plus authorization policy), ``uldr`` the
live details of every request seen, ``uadr`` the object ids granted to each
user. ``uadr`` only ever grows. One writer at a time; take a ``snapshot`` to
replay decisions against a frozen state.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .scoring import AccessEvent, AccessRequest, AuthorizationPolicy, UserProfile

FILES = ("uhdr.jsonl", "uldr.jsonl", "uadr.jsonl")


class KnowledgeError(ValueError):
    pass


class KnowledgeDB:
    def __init__(self) -> None:
        self._profiles: dict[str, UserProfile] = {}
        self._policies: dict[str, AuthorizationPolicy] = {}
        self._uldr: dict[str, dict] = {}
        self._uadr: dict[str, list[str]] = {}
        self.prevented: list[dict] = []  # denied requests, i.e. leaks the third party never received

    def register(self, profile: UserProfile, policy: AuthorizationPolicy | None = None) -> None:
        if profile.user_id in self._profiles:
            raise KnowledgeError(f"user {profile.user_id} already registered")
        policy = policy or AuthorizationPolicy(profile.user_id)
        if policy.user_id != profile.user_id:
            raise KnowledgeError("policy owner differs from profile owner")
        self._profiles[profile.user_id] = profile
        self._policies[profile.user_id] = policy

    def __contains__(self, user_id: str) -> bool:
        return user_id in self._profiles

    def __len__(self) -> int:
        return len(self._profiles)

    def profile(self, user_id: str) -> UserProfile | None:
        return self._profiles.get(user_id)

    def policy(self, user_id: str) -> AuthorizationPolicy:
        return self._policies.get(user_id) or AuthorizationPolicy(user_id)

    @property
    def user_ids(self) -> list[str]:
        return list(self._profiles)

    def log_request(self, request: AccessRequest) -> None:
        if request.request_id in self._uldr:
            raise KnowledgeError(f"request {request.request_id} already logged")
        self._uldr[request.request_id] = request.to_dict()

    def live_details(self, request_id: str) -> dict:
        return dict(self._uldr[request_id])

    @property
    def request_ids(self) -> list[str]:
        return list(self._uldr)

    def grant(self, request: AccessRequest) -> None:
        if request.request_id not in self._uldr:
            raise KnowledgeError(f"grant for unlogged request {request.request_id}")
        profile = self._profiles[request.user_id]
        for ds in request.requested_datasets:
            profile.record_access(AccessEvent(request.timestamp, ds), leaked=False)
        self._uadr.setdefault(request.user_id, []).extend(request.requested_datasets)

    def deny(self, request: AccessRequest, reason: str) -> None:
        profile = self._profiles.get(request.user_id)
        if profile is not None:
            authorized = self.policy(request.user_id).authorized
            for ds in request.requested_datasets:
                if ds not in authorized:
                    profile.unauthorized_attempts.append((request.timestamp, ds))
        self.prevented.append({"request_id": request.request_id, "user_id": request.user_id, "reason": reason})

    def allocated(self, user_id: str) -> tuple[str, ...]:
        return tuple(self._uadr.get(user_id, ()))

    def snapshot(self) -> KnowledgeDB:
        return copy.deepcopy(self)

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "uhdr.jsonl", "w", newline="\n") as fh:
            for uid, prof in self._profiles.items():
                row = {"profile": prof.to_dict(), "policy": self._policies[uid].to_dict()}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        with open(d / "uldr.jsonl", "w", newline="\n") as fh:
            for row in self._uldr.values():
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        with open(d / "uadr.jsonl", "w", newline="\n") as fh:
            for uid, ids in self._uadr.items():
                fh.write(json.dumps({"user_id": uid, "object_ids": ids}, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> KnowledgeDB:
        d = Path(directory)
        kdb = cls()
        for row in _read_jsonl(d / "uhdr.jsonl"):
            kdb.register(UserProfile.from_dict(row["profile"]), AuthorizationPolicy.from_dict(row["policy"]))
        for row in _read_jsonl(d / "uldr.jsonl"):
            kdb._uldr[row["request_id"]] = row
        for row in _read_jsonl(d / "uadr.jsonl"):
            kdb._uadr[row["user_id"]] = list(row["object_ids"])
        return kdb


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        raise KnowledgeError(f"missing {path.name} in {path.parent}")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
