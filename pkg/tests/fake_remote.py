"""An in-process chat-completions endpoint for recording replay fixtures.

It answers through httpx.MockTransport, so the real HTTP client code path
(payload, headers, JSON parsing) runs without any network.
"""
from __future__ import annotations

import json

import httpx

from closed_loop_mock import closed_loop_mock
from parley.backend import CompletionRequest, RemoteBackend

FIXTURE_SCENARIO = "highway_merge"
FIXTURE_VARIANT = "accident_prone"
FIXTURE_SEED = 11


def _handler(request: httpx.Request) -> httpx.Response:
    body = json.loads(request.content)
    assert request.headers["authorization"] == "Bearer test-key"
    req = CompletionRequest(tuple((m["role"], m["content"]) for m in body["messages"]), body["temperature"],
                            body["max_tokens"], body["model"])
    text = closed_loop_mock().complete(req).text
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def fake_remote() -> RemoteBackend:
    client = httpx.Client(transport=httpx.MockTransport(_handler))
    return RemoteBackend("https://fake.invalid/v1", api_key="test-key", client=client)
