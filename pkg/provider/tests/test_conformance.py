import json
import threading
import time
from pathlib import Path

import jsonschema
import pytest

FIXTURES = Path(__file__).parent / "fixtures"

INFO_SCHEMA = {
    "type": "object",
    "required": ["protocol_version", "model_name", "dim", "n_layers", "max_tokens"],
    "properties": {
        "protocol_version": {"const": 1},
        "model_name": {"type": "string"},
        "dim": {"type": "integer", "minimum": 1},
        "n_layers": {"type": "integer", "minimum": 1},
        "max_tokens": {"type": "integer", "minimum": 1},
    },
}

EMBED_SCHEMA = {
    "type": "object",
    "required": ["dim", "layers", "results"],
    "properties": {
        "dim": {"type": "integer", "minimum": 1},
        "layers": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "results": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["truncated", "target_subwords"],
                "properties": {
                    "truncated": {"type": "boolean"},
                    "target_subwords": {
                        "type": "array",
                        "items": {
                            "type": "array",
                            "items": {
                                "type": "array",
                                "items": {"type": "number"},
                            },
                        },
                    },
                },
            },
        },
    },
}


def golden_request():
    return json.loads((FIXTURES / "golden_request.json").read_text())


class TestInfo:
    def test_schema(self, client):
        resp = client.get("/info")
        assert resp.status_code == 200
        jsonschema.validate(resp.json(), INFO_SCHEMA)

    def test_advertised_dims_match_model(self, client, encoder):
        payload = client.get("/info").json()
        assert payload["dim"] == encoder.dim == 32
        assert payload["n_layers"] == encoder.n_layers == 4
        assert payload["max_tokens"] == encoder.max_tokens == 16


class TestEmbed:
    def test_schema(self, client):
        resp = client.post("/embed", json=golden_request())
        assert resp.status_code == 200
        jsonschema.validate(resp.json(), EMBED_SCHEMA)

    def test_identical_requests_identical_payloads(self, client):
        body = golden_request()
        first = client.post("/embed", json=body)
        second = client.post("/embed", json=body)
        assert first.content == second.content

    def test_layer_arrays_follow_request_order(self, client):
        body = {"layers": [3, 0, 1], "sentences": golden_request()["sentences"]}
        payload = client.post("/embed", json=body).json()
        assert payload["layers"] == [3, 0, 1]
        assert all(len(r["target_subwords"]) == 3 for r in payload["results"])

    def test_all_layers(self, client, encoder):
        body = {"layers": "all", "sentences": golden_request()["sentences"][:1]}
        payload = client.post("/embed", json=body).json()
        assert payload["layers"] == list(range(encoder.n_layers + 1))

    def test_multi_piece_target_returns_multiple_vectors(self, client):
        # "lifted" tokenizes into two word pieces in the tiny vocab.
        body = {
            "layers": [1],
            "sentences": [{"tokens": ["the", "lifted", "beam"], "target_index": 1}],
        }
        payload = client.post("/embed", json=body).json()
        vectors = payload["results"][0]["target_subwords"][0]
        assert len(vectors) == 2
        assert all(len(v) == 32 for v in vectors)

    def test_single_token_sentence(self, client):
        body = {"layers": [0], "sentences": [{"tokens": ["crane"], "target_index": 0}]}
        payload = client.post("/embed", json=body).json()
        assert len(payload["results"][0]["target_subwords"][0]) >= 1

    def test_oov_token_maps_to_unk(self, client):
        body = {"layers": [0], "sentences": [{"tokens": ["zzzz"], "target_index": 0}]}
        resp = client.post("/embed", json=body)
        assert resp.status_code == 200
        assert len(resp.json()["results"][0]["target_subwords"][0]) == 1

    def test_truncated_target_flagged(self, client):
        # 20 content pieces exceed the 14-piece window; target at the end.
        tokens = ["the"] * 19 + ["crane"]
        body = {"layers": [1], "sentences": [{"tokens": tokens, "target_index": 19}]}
        payload = client.post("/embed", json=body).json()
        assert payload["results"][0]["truncated"] is True
        assert payload["results"][0]["target_subwords"] == [[]]

    def test_truncation_spares_early_target(self, client):
        tokens = ["crane"] + ["the"] * 19
        body = {"layers": [1], "sentences": [{"tokens": tokens, "target_index": 0}]}
        payload = client.post("/embed", json=body).json()
        assert payload["results"][0]["truncated"] is False
        assert len(payload["results"][0]["target_subwords"][0]) == 1

    def test_order_preserved_across_batch(self, client):
        single = [
            client.post(
                "/embed",
                json={"layers": [2], "sentences": [s]},
            ).json()["results"][0]
            for s in golden_request()["sentences"]
        ]
        batched = client.post("/embed", json=golden_request() | {"layers": [2]}).json()
        for one, many in zip(single, batched["results"]):
            assert one["target_subwords"] == many["target_subwords"]


class TestErrors:
    def test_schema_violation_400(self, client):
        resp = client.post("/embed", json={"sentences": []})
        assert resp.status_code == 400

    def test_empty_tokens_400(self, client):
        resp = client.post(
            "/embed", json={"layers": [0], "sentences": [{"tokens": [], "target_index": 0}]}
        )
        assert resp.status_code == 400

    def test_target_index_out_of_range_400(self, client):
        resp = client.post(
            "/embed",
            json={"layers": [0], "sentences": [{"tokens": ["a"], "target_index": 3}]},
        )
        assert resp.status_code == 400

    def test_layer_out_of_range_400(self, client):
        resp = client.post(
            "/embed",
            json={"layers": [99], "sentences": [{"tokens": ["a"], "target_index": 0}]},
        )
        assert resp.status_code == 400

    def test_oversized_batch_413(self, client):
        sentences = [{"tokens": ["crane"], "target_index": 0}] * 9  # max_batch=8
        resp = client.post("/embed", json={"layers": [0], "sentences": sentences})
        assert resp.status_code == 413


class TestPrimaryClientReplay:
    """The primary package's protocol client must consume our payloads."""

    def test_golden_fixture_parses_with_zero_errors(self):
        from cwsd.embedding import ProviderInfo, parse_embed_response

        response = json.loads((FIXTURES / "golden_response.json").read_text())
        info = ProviderInfo(model_name="golden", dim=4, n_layers=2, max_tokens=16)
        embeddings = parse_embed_response(response, ["g.0", "g.1"], info)
        assert [e.instance_id for e in embeddings] == ["g.0", "g.1"]
        assert embeddings[0].layers[0].tolist() == [0.5, -1.25, 2.0, 0.125]
        assert embeddings[1].layers[0].tolist() == [2.0, 3.0, 4.0, 5.0]
        assert embeddings[1].layers[2].tolist() == [1.0, 1.0, 2.0, 2.0]

    def test_live_response_parses_with_zero_errors(self, client):
        from cwsd.embedding import ProviderInfo, parse_embed_response

        info = ProviderInfo.from_payload(client.get("/info").json())
        payload = client.post("/embed", json=golden_request()).json()
        embeddings = parse_embed_response(payload, ["x.0", "x.1"], info)
        assert len(embeddings) == 2
        assert set(embeddings[0].layers) == {0, 2}
        assert embeddings[0].dim == 32


class TestEndToEndOverHttp:
    @pytest.fixture()
    def live_url(self, app):
        import uvicorn

        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.time() + 10
        while not server.started:
            if time.time() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.02)
        port = server.servers[0].sockets[0].getsockname()[1]
        yield f"http://127.0.0.1:{port}"
        server.should_exit = True
        thread.join(timeout=5)

    def test_primary_fetch_against_live_server(self, live_url):
        import numpy as np

        from cwsd.corpus import Instance
        from cwsd.embedding import fetch_embeddings

        instances = [
            Instance("test.0", ("the", "crane", "lifted", "the", "beam"), 1, 0),
            Instance("test.1", ("a", "crane", "flew", "over", "the", "marsh"), 1, 0),
            Instance("test.2", ("the", "lifted", "beam"), 1, 0),
        ]
        out = fetch_embeddings(live_url, instances, layers=[1, 4], batch_size=2)
        assert [e.instance_id for e in out] == ["test.0", "test.1", "test.2"]
        for e in out:
            assert set(e.layers) == {1, 4}
            assert e.dim == 32
            for vec in e.layers.values():
                assert np.isfinite(vec).all()
        # Same sentence, same vectors: the provider is deterministic.
        again = fetch_embeddings(live_url, instances[:1], layers=[1, 4])
        assert again[0].layers[1].tobytes() == out[0].layers[1].tobytes()
