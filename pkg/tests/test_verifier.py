import dataclasses
import json
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from drivesql.generation import (
    DetectionList,
    ExternalClient,
    FreeText,
    GenerationConfig,
    Label,
    Numeric,
    offline_check,
    verify_pairs,
)
from drivesql.scene_db import BBox2D, View
from drivesql.task_sql import RISK_SUBTASKS, Subtask


def _first(pairs, predicate):
    for pair in pairs:
        if predicate(pair):
            return pair
    raise AssertionError("corpus is missing an expected pair shape")


@pytest.fixture(scope="module")
def samples(demo_pairs):
    return {
        "numeric": _first(demo_pairs, lambda p: isinstance(p.ground_truth, Numeric)),
        "label": _first(demo_pairs, lambda p: isinstance(p.ground_truth, Label)),
        "risk_hit": _first(
            demo_pairs,
            lambda p: isinstance(p.ground_truth, DetectionList) and p.ground_truth.items,
        ),
        "risk_empty": _first(
            demo_pairs,
            lambda p: isinstance(p.ground_truth, DetectionList) and not p.ground_truth.items,
        ),
        "planning": _first(demo_pairs, lambda p: isinstance(p.ground_truth, FreeText)),
    }


# ------------------------------------------------------------ offline rules


def test_generated_pairs_pass_offline_rules(demo_db, demo_pairs):
    for pair in demo_pairs:
        assert offline_check(pair, demo_db) is None, pair.pair_id


def test_numeric_response_missing_numbers(samples):
    broken = dataclasses.replace(samples["numeric"], response="no values here")
    reason = offline_check(broken)
    assert "parseable numbers" in reason


def test_numeric_non_finite_truth(samples):
    broken = dataclasses.replace(samples["numeric"], ground_truth=Numeric((float("nan"),)))
    assert "non-finite" in offline_check(broken)


def test_label_mentioned_twice(samples):
    pair = samples["label"]
    word = pair.ground_truth.value
    broken = dataclasses.replace(pair, response=f"{word} and {word} again")
    assert "needs exactly 1" in offline_check(broken)


def test_label_never_mentioned(samples):
    broken = dataclasses.replace(samples["label"], response="nothing relevant")
    assert "0 times" in offline_check(broken)


def test_truth_type_must_fit_subtask(samples):
    broken = dataclasses.replace(samples["numeric"], ground_truth=Label("car"))
    assert "does not fit subtask" in offline_check(broken)


def test_detection_box_outside_image(samples):
    pair = samples["risk_hit"]
    det = dataclasses.replace(pair.ground_truth.items[0], bbox=BBox2D(-5.0, 10.0, 50.0, 60.0))
    broken = dataclasses.replace(pair, ground_truth=DetectionList((det,)))
    assert "image bounds" in offline_check(broken)


def test_detection_requires_concrete_view(samples):
    pair = samples["risk_hit"]
    det = dataclasses.replace(pair.ground_truth.items[0], view=View.ALL)
    broken = dataclasses.replace(pair, ground_truth=DetectionList((det,)))
    assert "concrete view" in offline_check(broken)


def test_detection_missing_from_response(samples):
    broken = dataclasses.replace(samples["risk_hit"], response="Yes, something vague.")
    assert "mention every detection" in offline_check(broken)


def test_detection_unknown_instance(demo_db, samples):
    pair = samples["risk_hit"]
    det = dataclasses.replace(pair.ground_truth.items[0], instance_id="ghost")
    broken = dataclasses.replace(pair, ground_truth=DetectionList((det,)))
    assert offline_check(broken) is None  # without a database the id is unchecked
    assert "unknown instance 'ghost'" in offline_check(broken, demo_db)


def test_risk_pair_requires_thresholds(samples):
    broken = dataclasses.replace(samples["risk_empty"], thresholds_used=None)
    assert "thresholds" in offline_check(broken)


def test_empty_detection_list_requires_no(samples):
    broken = dataclasses.replace(samples["risk_empty"], response="Yes, a car.")
    assert "requires the response 'No.'" in offline_check(broken)


def test_planning_text_must_match_truth(samples):
    broken = dataclasses.replace(samples["planning"], response="Drive safely.")
    assert "must equal the response" in offline_check(broken)


def test_offline_rejections_are_prefixed(demo_pairs):
    broken = dataclasses.replace(demo_pairs[0], response="no values here")
    result = verify_pairs([broken], GenerationConfig())
    assert result.kept == []
    assert len(result.rejected) == 1
    pair_id, reason = result.rejected[0]
    assert pair_id == broken.pair_id
    assert reason.startswith("format contract: ")


def test_offline_keeps_clean_pairs(demo_pairs):
    result = verify_pairs(demo_pairs, GenerationConfig())
    assert [p.pair_id for p in result.kept] == [p.pair_id for p in demo_pairs]
    assert result.rejected == []
    assert result.unverified == set()
    assert result.revised == set()


# --------------------------------------------------------- external service


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length).decode("utf-8"))
        self.server.requests.append(payload)
        reply = self.server.route(payload)
        body = json.dumps(reply).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *_args):
        pass


@contextmanager
def mock_reviewer(route):
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.route = route
    server.requests = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server, f"http://127.0.0.1:{server.server_address[1]}/review"
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=2)


def _config(url, **kwargs):
    return GenerationConfig(verifier=ExternalClient(endpoint=url, **kwargs))


def test_external_keep_and_payload_shape(demo_pairs):
    subset = demo_pairs[:5]
    with mock_reviewer(lambda payload: {"verdict": "keep"}) as (server, url):
        result = verify_pairs(subset, _config(url))
    assert [p.pair_id for p in result.kept] == [p.pair_id for p in subset]
    assert result.unverified == set()
    assert len(server.requests) == len(subset)
    for sent, pair in zip(server.requests, subset):
        assert set(sent) == {"pair_id", "instruction", "response", "subtask", "ground_truth"}
        assert sent["pair_id"] == pair.pair_id
        assert sent["subtask"] == pair.subtask.value
        assert sent["response"] == pair.response


def test_external_drop_records_reason(demo_pairs):
    subset = demo_pairs[:4]
    victim = subset[2].pair_id

    def route(payload):
        if payload["pair_id"] == victim:
            return {"verdict": "drop", "reason": "sounds wrong"}
        return {"verdict": "keep"}

    with mock_reviewer(route) as (_, url):
        result = verify_pairs(subset, _config(url))
    assert victim not in {p.pair_id for p in result.kept}
    assert (victim, "sounds wrong") in result.rejected
    assert len(result.kept) == 3


def test_external_revise_updates_planning_truth(demo_pairs, samples):
    pair = samples["planning"]
    new_text = "There are no risky objects around the ego car. Hence hold."

    def route(payload):
        if payload["pair_id"] == pair.pair_id:
            return {"verdict": "revise", "revised_response": new_text}
        return {"verdict": "keep"}

    with mock_reviewer(route) as (_, url):
        result = verify_pairs([pair], _config(url))
    assert result.revised == {pair.pair_id}
    (kept,) = result.kept
    assert kept.response == new_text
    assert kept.ground_truth == FreeText(new_text)


def test_external_revise_keeps_structured_truth(samples):
    pair = samples["numeric"]
    with mock_reviewer(
        lambda payload: {"verdict": "revise", "revised_response": pair.response + " exactly"}
    ) as (_, url):
        result = verify_pairs([pair], _config(url))
    (kept,) = result.kept
    assert kept.response.endswith("exactly")
    assert kept.ground_truth == pair.ground_truth
    assert result.revised == {pair.pair_id}


def test_external_unknown_verdict_keeps_unverified(samples):
    pair = samples["label"]
    with mock_reviewer(lambda payload: {"verdict": "maybe"}) as (_, url):
        result = verify_pairs([pair], _config(url))
    assert [p.pair_id for p in result.kept] == [pair.pair_id]
    assert result.unverified == {pair.pair_id}


def test_external_revise_without_text_keeps_unverified(samples):
    pair = samples["label"]
    with mock_reviewer(lambda payload: {"verdict": "revise"}) as (_, url):
        result = verify_pairs([pair], _config(url))
    assert [p.pair_id for p in result.kept] == [pair.pair_id]
    assert result.unverified == {pair.pair_id}
    assert result.kept[0].response == pair.response


def test_external_unreachable_keeps_all_unverified(demo_pairs):
    subset = demo_pairs[:3]
    config = GenerationConfig(
        verifier=ExternalClient(endpoint="http://127.0.0.1:9/review", timeout_s=0.2, retries=1)
    )
    result = verify_pairs(subset, config)
    assert [p.pair_id for p in result.kept] == [p.pair_id for p in subset]
    assert result.unverified == {p.pair_id for p in subset}


def test_offline_rejection_skips_external_call(demo_pairs):
    broken = dataclasses.replace(demo_pairs[0], response="no numbers")
    with mock_reviewer(lambda payload: {"verdict": "keep"}) as (server, url):
        result = verify_pairs([broken], _config(url))
    assert server.requests == []
    assert result.kept == []
    assert result.rejected[0][1].startswith("format contract: ")
