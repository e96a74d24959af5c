import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sieve.backends import (
    BACKEND_URL_ENV,
    BackendInfo,
    CaptionRequest,
    FileBackend,
    MockBackend,
    ServiceBackend,
    check_backend,
    hash64,
    resolve_service_url,
)
from sieve.corpus_io import EmbeddingShard, write_embedding_shard
from sieve.errors import (
    BackendError,
    ConfigError,
    NotFoundError,
    ProtocolError,
    TransportError,
)

SCENE = "mock://scene/red+cat+mat"


class TestHash64:
    def test_frozen_values(self):
        assert hash64("mock-token", "cat") == 12423915472433218558
        assert hash64() == 13020603013274838756

    def test_length_prefix_separates_concatenations(self):
        assert hash64("ab", "c") != hash64("a", "bc")
        assert hash64("ab", "c") == 3676821168146716919

    def test_fits_in_uint64(self):
        assert 0 <= hash64("x", 123) < 2**64


class TestCaptionRequest:
    def test_defaults(self):
        request = CaptionRequest(image_ref="img:x")
        assert (request.r, request.top_p) == (8, 0.9)
        assert (request.min_len, request.max_len) == (5, 20)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"r": 0},
            {"top_p": 0.0},
            {"top_p": 1.5},
            {"min_len": 0},
            {"min_len": 10, "max_len": 9},
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ConfigError):
            CaptionRequest(image_ref="img:x", **kwargs)


class TestMockCaptions:
    def test_info(self):
        info = MockBackend().info()
        assert info == BackendInfo(dim=64, encoder_id="mock-bow-v1",
                                   captioner_id="mock-captioner-v1")

    def test_deterministic(self):
        backend = MockBackend()
        request = CaptionRequest(image_ref=SCENE, r=6, seed=3)
        assert backend.generate_captions(request) == backend.generate_captions(request)

    def test_seed_changes_output(self):
        backend = MockBackend()
        a = backend.generate_captions(CaptionRequest(image_ref=SCENE, r=6, seed=3))
        b = backend.generate_captions(CaptionRequest(image_ref=SCENE, r=6, seed=4))
        assert a != b

    def test_r_prefix_property(self):
        # Caption i depends only on (image_ref, seed, i), so raising r extends
        # the list without disturbing earlier entries.
        backend = MockBackend()
        small = backend.generate_captions(CaptionRequest(image_ref=SCENE, r=4, seed=7))
        large = backend.generate_captions(CaptionRequest(image_ref=SCENE, r=8, seed=7))
        assert large[:4] == small

    def test_frozen_example(self):
        captions = MockBackend().generate_captions(
            CaptionRequest(image_ref=SCENE, r=2, seed=7)
        )
        assert captions == [
            "mat cat mat red mat",
            "red cat red cat mat cat cat cat red red cat red cat cat cat",
        ]

    @given(seed=st.integers(0, 2**32), r=st.integers(1, 8),
           min_len=st.integers(1, 10), extra=st.integers(0, 15))
    @settings(max_examples=60)
    def test_lengths_within_bounds(self, seed, r, min_len, extra):
        max_len = min_len + extra
        request = CaptionRequest(image_ref=SCENE, r=r, seed=seed,
                                 min_len=min_len, max_len=max_len)
        for caption in MockBackend().generate_captions(request):
            assert min_len <= len(caption.split()) <= max_len

    def test_tokens_come_from_scene_or_phrase(self):
        allowed = {"red", "cat", "mat", "a", "an", "photo", "picture", "image", "of"}
        captions = MockBackend().generate_captions(
            CaptionRequest(image_ref=SCENE, r=16, seed=0)
        )
        for caption in captions:
            assert set(caption.split()) <= allowed

    def test_phrase_rate_endpoints(self):
        openers = ("a photo of", "a picture of", "an image of")
        request = CaptionRequest(image_ref=SCENE, r=32, seed=5)
        never = MockBackend(medium_phrase_rate=0.0).generate_captions(request)
        assert not any(c.startswith(openers) for c in never)
        always = MockBackend(medium_phrase_rate=1.0).generate_captions(request)
        assert all(c.startswith(openers) for c in always)

    def test_phrase_dropped_when_no_room(self):
        request = CaptionRequest(image_ref=SCENE, r=16, seed=5, min_len=2, max_len=3)
        for caption in MockBackend(medium_phrase_rate=1.0).generate_captions(request):
            assert 2 <= len(caption.split()) <= 3
            assert set(caption.split()) <= {"red", "cat", "mat"}

    def test_fallback_scene_parsing(self):
        captions = MockBackend(medium_phrase_rate=0.0).generate_captions(
            CaptionRequest(image_ref="img:cat", r=4, seed=1)
        )
        for caption in captions:
            assert set(caption.split()) <= {"img", "cat"}

    def test_blank_ref_depicts_object(self):
        captions = MockBackend(medium_phrase_rate=0.0).generate_captions(
            CaptionRequest(image_ref="", r=2, seed=1)
        )
        assert all(set(c.split()) == {"object"} for c in captions)

    def test_bad_rate_rejected(self):
        with pytest.raises(ConfigError):
            MockBackend(medium_phrase_rate=1.1)


class TestMockEmbeddings:
    def test_shape_norm_dtype(self):
        (vector,) = MockBackend().embed_texts(["red cat mat"])
        assert vector.shape == (64,)
        assert vector.dtype == np.float32
        assert abs(float(np.linalg.norm(vector)) - 1.0) < 1e-6

    def test_deterministic(self):
        backend = MockBackend()
        a, b = backend.embed_texts(["snow on a red mat"] * 2)
        assert np.array_equal(a, b)

    def test_empty_text_is_zero(self):
        (vector,) = MockBackend().embed_texts([""])
        assert np.array_equal(vector, np.zeros(64, dtype=np.float32))

    def test_token_order_of_pair_is_irrelevant(self):
        a, b = MockBackend().embed_texts(["red cat", "cat red"])
        assert np.array_equal(a, b)

    def test_case_folds(self):
        a, b = MockBackend().embed_texts(["Red CAT", "red cat"])
        assert np.array_equal(a, b)

    @given(st.permutations(["red", "cat", "mat", "snow", "sky", "plane"]))
    @settings(max_examples=30)
    def test_multiset_determines_embedding(self, tokens):
        # Summation order may shift the last float64 bit before the f32 cast,
        # so the guarantee is agreement to ~1e-7, not bit equality.
        a, b = MockBackend().embed_texts([" ".join(tokens), "red cat mat snow sky plane"])
        assert float(np.max(np.abs(a - b))) < 1e-6

    def test_disjoint_vocabularies_are_dissimilar(self):
        a, b = MockBackend().embed_texts(["red cat mat", "blue sky plane"])
        assert abs(float(np.dot(a, b))) < 0.5

    def test_shared_tokens_raise_similarity(self):
        backend = MockBackend()
        base, near, far = backend.embed_texts(
            ["red cat mat", "red cat snow", "blue sky plane"]
        )
        assert float(np.dot(base, near)) > float(np.dot(base, far))


def build_file_backend(tmp_path, captions=None, texts=("red cat",)):
    mock = MockBackend()
    keys = sorted(set(texts))
    vectors = mock.embed_texts(keys)
    shard = EmbeddingShard(dim=64, rows=tuple(zip(keys, vectors)),
                           encoder_id="mock-bow-v1")
    emb_path = tmp_path / "pre.emb"
    write_embedding_shard(shard, emb_path)
    cap_path = None
    if captions is not None:
        cap_path = tmp_path / "captions.jsonl"
        with cap_path.open("w", encoding="utf-8") as handle:
            for key, stored in captions.items():
                handle.write(json.dumps({"key": key, "captions": stored}) + "\n")
    return FileBackend(emb_path, cap_path)


class TestFileBackend:
    def test_embeddings_pass_through(self, tmp_path):
        backend = build_file_backend(tmp_path, texts=["red cat", "blue sky"])
        expected = MockBackend().embed_texts(["blue sky"])[0]
        assert np.array_equal(backend.embed_texts(["blue sky"])[0], expected)

    def test_missing_text(self, tmp_path):
        backend = build_file_backend(tmp_path, texts=["red cat"])
        with pytest.raises(NotFoundError):
            backend.embed_texts(["never stored"])

    def test_empty_text_is_zero_by_convention(self, tmp_path):
        (vector,) = build_file_backend(tmp_path).embed_texts([""])
        assert np.array_equal(vector, np.zeros(64, dtype=np.float32))

    def test_captions_first_r(self, tmp_path):
        backend = build_file_backend(
            tmp_path, captions={"img:x": ["one 1", "two 2", "three 3"]}
        )
        got = backend.generate_captions(CaptionRequest(image_ref="img:x", r=2))
        assert got == ["one 1", "two 2"]

    def test_sampling_parameters_ignored(self, tmp_path):
        backend = build_file_backend(tmp_path, captions={"img:x": ["a b c d e"]})
        loose = backend.generate_captions(CaptionRequest(image_ref="img:x", r=1, top_p=0.1))
        tight = backend.generate_captions(
            CaptionRequest(image_ref="img:x", r=1, min_len=1, max_len=1)
        )
        assert loose == tight == ["a b c d e"]

    def test_too_few_captions(self, tmp_path):
        backend = build_file_backend(tmp_path, captions={"img:x": ["only one"]})
        with pytest.raises(BackendError, match="r=3"):
            backend.generate_captions(CaptionRequest(image_ref="img:x", r=3))

    def test_unknown_image(self, tmp_path):
        backend = build_file_backend(tmp_path, captions={})
        with pytest.raises(NotFoundError):
            backend.generate_captions(CaptionRequest(image_ref="img:x", r=1))

    def test_info_reflects_shard(self, tmp_path):
        info = build_file_backend(tmp_path).info()
        assert info.dim == 64
        assert info.encoder_id == "mock-bow-v1"
        assert info.captioner_id == "file-precomputed"


class StubHandler(BaseHTTPRequestHandler):
    """Minimal model server backed by MockBackend, with fault injection."""

    backend = MockBackend()
    faults: dict[str, str] = {}

    def log_message(self, *args):
        pass

    def _reply(self, status, payload, raw=None):
        body = raw if raw is not None else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/info":
            return self._reply(404, {"error": "no such route"})
        info = self.backend.info()
        self._reply(200, {"dim": info.dim, "encoder_id": info.encoder_id,
                          "captioner_id": info.captioner_id})

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length))
        fault = self.faults.get(self.path)
        if fault == "not-json":
            return self._reply(200, None, raw=b"<html>oops</html>")
        if fault == "error-500":
            return self._reply(500, {"error": "model exploded"})
        if fault == "missing-image":
            return self._reply(404, {"error": "unknown image"})
        if self.path == "/caption":
            captions = self.backend.generate_captions(
                CaptionRequest(
                    image_ref=payload["image"], r=payload["r"], top_p=payload["top_p"],
                    min_len=payload["min_len"], max_len=payload["max_len"],
                    seed=payload["seed"],
                )
            )
            if fault == "short-list":
                captions = captions[:-1]
            self._reply(200, {"captions": captions})
        elif self.path == "/embed":
            vectors = self.backend.embed_texts(payload["texts"])
            self._reply(200, {"embeddings": [v.tolist() for v in vectors]})
        else:
            self._reply(404, {"error": "no such route"})


@pytest.fixture()
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    StubHandler.faults = {}
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


class TestServiceBackend:
    def test_info_round_trip(self, stub_server):
        assert ServiceBackend(stub_server).info() == MockBackend().info()

    def test_captions_match_local_backend(self, stub_server):
        request = CaptionRequest(image_ref=SCENE, r=3, seed=9)
        remote = ServiceBackend(stub_server).generate_captions(request)
        assert remote == MockBackend().generate_captions(request)

    def test_embeddings_match_local_backend(self, stub_server):
        texts = ["red cat", "", "blue sky plane"]
        remote = ServiceBackend(stub_server).embed_texts(texts)
        local = MockBackend().embed_texts(texts)
        assert all(np.array_equal(a, b) for a, b in zip(remote, local))

    def test_404_maps_to_not_found(self, stub_server):
        StubHandler.faults = {"/caption": "missing-image"}
        with pytest.raises(NotFoundError, match="unknown image"):
            ServiceBackend(stub_server).generate_captions(CaptionRequest(image_ref="x", r=1))

    def test_500_maps_to_backend_error(self, stub_server):
        StubHandler.faults = {"/embed": "error-500"}
        with pytest.raises(BackendError, match="model exploded"):
            ServiceBackend(stub_server).embed_texts(["x"])

    def test_non_json_body_is_protocol_error(self, stub_server):
        StubHandler.faults = {"/embed": "not-json"}
        with pytest.raises(ProtocolError):
            ServiceBackend(stub_server).embed_texts(["x"])

    def test_wrong_caption_arity_is_protocol_error(self, stub_server):
        StubHandler.faults = {"/caption": "short-list"}
        with pytest.raises(ProtocolError, match="expected 3"):
            ServiceBackend(stub_server).generate_captions(
                CaptionRequest(image_ref=SCENE, r=3)
            )

    def test_unreachable_server_is_transport_error(self):
        with pytest.raises(TransportError):
            ServiceBackend("http://127.0.0.1:9", timeout=0.2).info()


class TestResolveServiceUrl:
    def test_environment_wins(self, monkeypatch):
        monkeypatch.setenv(BACKEND_URL_ENV, "http://env")
        assert resolve_service_url("http://flag", "http://file") == "http://env"

    def test_flag_beats_config_file(self, monkeypatch):
        monkeypatch.delenv(BACKEND_URL_ENV, raising=False)
        assert resolve_service_url("http://flag", "http://file") == "http://flag"

    def test_config_file_is_fallback(self, monkeypatch):
        monkeypatch.delenv(BACKEND_URL_ENV, raising=False)
        assert resolve_service_url(None, "http://file") == "http://file"
        assert resolve_service_url(None, None) is None


class TestConformance:
    def test_mock_passes(self):
        report = check_backend(MockBackend())
        assert set(report.values()) == {"ok"}
        assert "caption-determinism" in report

    def test_file_backend_passes(self, tmp_path):
        refs = ("img:a", "img:b")
        mock = MockBackend()
        captions = {
            ref: mock.generate_captions(CaptionRequest(image_ref=ref, r=3, seed=11))
            for ref in refs
        }
        texts = sorted({c for stored in captions.values() for c in stored})
        backend = build_file_backend(tmp_path, captions=captions, texts=texts)
        report = check_backend(backend, image_refs=refs, r=3, seed=11)
        assert set(report.values()) == {"ok"}

    def test_service_backend_passes(self, stub_server):
        report = check_backend(ServiceBackend(stub_server))
        assert set(report.values()) == {"ok"}

    def test_wrong_dim_fails_named_check(self):
        class WrongDim(MockBackend):
            def embed_texts(self, texts):
                return [v[:32] for v in super().embed_texts(texts)]

        with pytest.raises(BackendError, match="embed-dim"):
            check_backend(WrongDim())

    def test_nondeterministic_captioner_fails(self):
        class Flaky(MockBackend):
            def __init__(self):
                super().__init__()
                self.calls = 0

            def generate_captions(self, request):
                self.calls += 1
                return super().generate_captions(
                    CaptionRequest(image_ref=request.image_ref, r=request.r,
                                   seed=request.seed + self.calls)
                )

        with pytest.raises(BackendError, match="caption-determinism"):
            check_backend(Flaky())

    def test_determinism_check_can_be_waived(self):
        class Flaky(MockBackend):
            def __init__(self):
                super().__init__()
                self.calls = 0

            def generate_captions(self, request):
                self.calls += 1
                return super().generate_captions(
                    CaptionRequest(image_ref=request.image_ref, r=request.r,
                                   seed=request.seed + self.calls)
                )

        report = check_backend(Flaky(), require_deterministic=False)
        assert "caption-determinism" not in report

    def test_no_refs_rejected(self):
        with pytest.raises(ConfigError):
            check_backend(MockBackend(), image_refs=())
