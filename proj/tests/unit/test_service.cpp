#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <nlohmann/json.hpp>

#include "astra/common/error.hpp"
#include "astra/common/io.hpp"
#include "astra/pose/raster.hpp"
#include "astra/service/config.hpp"
#include "astra/service/engine.hpp"
#include "service_fixture.hpp"
#include "stub_server.hpp"

using namespace astra;
using namespace astra::service;
using astra::test::fake_env;
using astra::test::TempDir;
using nlohmann::json;

namespace {

constexpr const char* kFullConfig = R"(
index_path = "data/fixture.idx"
pose_store_path = "/abs/poses.json"
log_level = "debug"

[gate]
alpha_u = 0.6

[clients]
embed_url = "http://127.0.0.1:9001"
normalize_url = "http://127.0.0.1:9002"
embed_fallback = true
timeout_ms = 1500
plugin_timeout_ms = 4000

[server]
host = "0.0.0.0"
port = 9000

[plugins]
clip_i = "http://127.0.0.1:9100"
dino = "http://127.0.0.1:9101"
)";

struct RunningServer {
    explicit RunningServer(const Engine& engine) : server(engine) {
        port = server.bind("127.0.0.1", 0);
        thread = std::thread([this] { server.run(); });
        server.wait_until_ready();
    }
    ~RunningServer() {
        server.stop();
        thread.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(std::chrono::seconds(5));
        return c;
    }

    Server server;
    int port = 0;
    std::thread thread;
};

std::unique_ptr<Engine> fixture_engine(const TempDir& dir, EngineConfig cfg = {}) {
    const auto files = test::write_service_fixture(dir);
    cfg.index_path = files.index;
    cfg.pose_store_path = files.poses;
    return Engine::open(cfg, {.passthrough = false, .require_pose_store = true});
}

}  // namespace

TEST_CASE("config defaults") {
    const EngineConfig cfg;
    CHECK(cfg.alpha_u == 0.55);
    CHECK(cfg.embed_timeout == std::chrono::milliseconds(2000));
    CHECK(cfg.normalize_timeout == std::chrono::milliseconds(2000));
    CHECK(cfg.embed_url.empty());
    CHECK(cfg.normalize_url.empty());
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config from toml") {
    const auto cfg = config_from_toml(kFullConfig, "/srv/astra");
    CHECK(cfg.index_path == std::filesystem::path("/srv/astra/data/fixture.idx"));
    CHECK(cfg.pose_store_path == std::filesystem::path("/abs/poses.json"));
    CHECK(cfg.log_level == "debug");
    CHECK(cfg.alpha_u == 0.6);
    CHECK(cfg.embed_url == "http://127.0.0.1:9001");
    CHECK(cfg.normalize_url == "http://127.0.0.1:9002");
    CHECK(cfg.embed_fallback);
    CHECK(cfg.embed_timeout == std::chrono::milliseconds(1500));
    CHECK(cfg.normalize_timeout == std::chrono::milliseconds(1500));
    CHECK(cfg.plugin_timeout == std::chrono::milliseconds(4000));
    CHECK(cfg.host == "0.0.0.0");
    CHECK(cfg.port == 9000);
    REQUIRE(cfg.plugins.size() == 2);
    CHECK(cfg.plugins.at("dino") == "http://127.0.0.1:9101");
}

TEST_CASE("integer alpha_u is accepted") {
    CHECK(config_from_toml("[gate]\nalpha_u = 1\n").alpha_u == 1.0);
}

TEST_CASE("invalid config values") {
    CHECK_THROWS_AS(config_from_toml("[gate]\nalpha_u = 1.5\n"), ValidationError);
    CHECK_THROWS_AS(config_from_toml("[gate]\nalpha_u = -0.01\n"), ValidationError);
    CHECK_THROWS_AS(config_from_toml("[gate]\nalpha_u = nan\n"), ValidationError);
    CHECK_THROWS_AS(config_from_toml("[gate]\nalpha_u = \"high\"\n"), ValidationError);
    CHECK_THROWS_AS(config_from_toml("[clients]\ntimeout_ms = 0\n"), ValidationError);
    CHECK_THROWS_AS(config_from_toml("[server]\nport = 70000\n"), ValidationError);
    CHECK_THROWS_AS(config_from_toml("log_level = \"loud\"\n"), ValidationError);
    CHECK_THROWS_AS(config_from_toml("[plugins]\nclip_i = 3\n"), ValidationError);
    CHECK_THROWS_AS(config_from_toml("index_path = \n"), ParseError);
}

TEST_CASE("environment overrides the file and flags are left to the caller") {
    TempDir dir("cfg");
    write_file(dir / "astra.toml", "index_path = \"a.idx\"\n[gate]\nalpha_u = 0.7\n");

    SUBCASE("file only") {
        const auto cfg = load_config(dir / "astra.toml", fake_env());
        CHECK(cfg.index_path == dir / "a.idx");
        CHECK(cfg.alpha_u == 0.7);
    }
    SUBCASE("env wins over file") {
        const auto cfg = load_config(dir / "astra.toml",
                                     fake_env({{"ASTRA_INDEX_PATH", "/env.idx"},
                                               {"ASTRA_ALPHA_U", "0.4"},
                                               {"ASTRA_EMBED_URL", "http://e"},
                                               {"ASTRA_NORMALIZE_URL", "http://n"}}));
        CHECK(cfg.index_path == std::filesystem::path("/env.idx"));
        CHECK(cfg.alpha_u == 0.4);
        CHECK(cfg.embed_url == "http://e");
        CHECK(cfg.normalize_url == "http://n");
    }
    SUBCASE("ASTRA_CONFIG names the file") {
        const auto cfg = load_config(std::nullopt, fake_env({{"ASTRA_CONFIG", (dir / "astra.toml").string()}}));
        CHECK(cfg.alpha_u == 0.7);
    }
    SUBCASE("explicit path beats ASTRA_CONFIG") {
        write_file(dir / "other.toml", "[gate]\nalpha_u = 0.2\n");
        const auto cfg = load_config(dir / "other.toml", fake_env({{"ASTRA_CONFIG", (dir / "astra.toml").string()}}));
        CHECK(cfg.alpha_u == 0.2);
    }
    SUBCASE("bad env values") {
        CHECK_THROWS_AS(load_config(std::nullopt, fake_env({{"ASTRA_ALPHA_U", "0.5x"}})), ValidationError);
        CHECK_THROWS_AS(load_config(std::nullopt, fake_env({{"ASTRA_ALPHA_U", "2"}})), ValidationError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_config(dir / "absent.toml", fake_env()), IoError);
    }
}

TEST_CASE("pose store round trip and validation") {
    TempDir dir("store");
    const auto store = test::fixture_pose_store(5);
    store.save(dir / "poses.json");
    const auto loaded = PoseStore::load(dir / "poses.json");
    CHECK(loaded.size() == 5);
    CHECK(loaded.to_json() == store.to_json());
    CHECK(loaded.find("pose-3") != nullptr);
    CHECK(loaded.find("pose-9") == nullptr);

    json bad = store.to_json();
    bad["pose-0"]["width"] = 0;
    CHECK_THROWS_AS(PoseStore::from_json(bad), ValidationError);
    CHECK_THROWS_AS(PoseStore::from_json(json::array()), ParseError);
}

TEST_CASE("engine open failures") {
    TempDir dir("open");
    const auto files = test::write_service_fixture(dir);
    EngineConfig cfg;
    CHECK_THROWS_AS(Engine::open(cfg), ValidationError);

    cfg.index_path = files.index;
    CHECK_NOTHROW(Engine::open(cfg));
    CHECK_THROWS_AS(Engine::open(cfg, {.passthrough = false, .require_pose_store = true}), ValidationError);

    std::string bytes = read_file(files.index);
    bytes[0] = 'X';
    write_file(dir / "corrupt.idx", bytes);
    cfg.index_path = dir / "corrupt.idx";
    CHECK_THROWS_AS(Engine::open(cfg), IndexError);
}

TEST_CASE("handlers") {
    TempDir dir("handlers");
    const auto engine = fixture_engine(dir);
    const auto prompts = test::fixture_prompts();

    SUBCASE("health") {
        const auto r = engine->handle("GET", "/health", "");
        CHECK(r.status == 200);
        CHECK(json::parse(r.body) == json{{"status", "ok"}, {"index_entries", 100}});
    }
    SUBCASE("index info") {
        const auto doc = json::parse(engine->handle("GET", "/index/info", "").body);
        CHECK(doc["entries"] == 100);
        CHECK(doc["dim"] == 384);
        CHECK(doc["alpha_u"] == 0.55);
        CHECK(doc["normalizer"] == "passthrough");
    }
    SUBCASE("retrieve hit") {
        const auto r = engine->handle("POST", "/retrieve", json{{"prompt", prompts[42]}}.dump());
        REQUIRE(r.status == 200);
        const auto doc = json::parse(r.body);
        CHECK(doc["kind"] == "hit");
        CHECK(doc["entry_id"] == 42);
        CHECK(doc["pose_ref"] == "pose-42");
        CHECK(doc["pose_url"] == "/pose/42.png");
        CHECK(doc["score"].get<double>() == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("retrieve bypass") {
        const auto doc =
            json::parse(engine->handle("POST", "/retrieve", json{{"prompt", test::kOutOfDistributionPrompt}}.dump()).body);
        CHECK(doc["kind"] == "bypassed");
        CHECK_FALSE(doc.contains("pose_url"));
        CHECK(doc["best_score"].get<double>() <= 0.55);
    }
    SUBCASE("bad requests") {
        CHECK(engine->handle("POST", "/retrieve", "not json").status == 400);
        CHECK(engine->handle("POST", "/retrieve", R"({"prompt": 3})").status == 400);
        CHECK(engine->handle("POST", "/retrieve", R"({"prompt": "   "})").status == 400);
        CHECK(engine->handle("GET", "/retrieve", "").status == 405);
        CHECK(engine->handle("POST", "/health", "").status == 405);
        CHECK(engine->handle("GET", "/nowhere", "").status == 404);
        CHECK(engine->handle("GET", "/pose/abc.png", "").status == 404);
        CHECK(engine->handle("GET", "/pose/1000.png", "").status == 404);
    }
    SUBCASE("pose png equals offline rendering") {
        const auto r = engine->handle("GET", "/pose/7.png", "");
        REQUIRE(r.status == 200);
        CHECK(r.content_type == "image/png");
        const auto* map = engine->poses().find("pose-7");
        REQUIRE(map != nullptr);
        CHECK(r.body == pose::encode_png(pose::rasterize(*map)));
    }
}

TEST_CASE("entry whose pose_ref is missing from the store") {
    retrieval::HashingEmbedder embedder;
    auto index = test::fixture_index(embedder);
    Engine engine(EngineConfig{}, std::move(index), test::fixture_pose_store(10));
    CHECK(engine.handle("GET", "/pose/3.png", "").status == 200);
    CHECK(engine.handle("GET", "/pose/50.png", "").status == 404);
}

TEST_CASE("same config reproduces identical responses") {
    TempDir dir("restart");
    const auto files = test::write_service_fixture(dir);
    EngineConfig cfg;
    cfg.index_path = files.index;
    cfg.pose_store_path = files.poses;
    const auto a = Engine::open(cfg);
    const auto b = Engine::open(cfg);
    for (const auto& prompt : test::fixture_prompts()) {
        const std::string body = json{{"prompt", prompt}}.dump();
        CHECK(a->handle("POST", "/retrieve", body).body == b->handle("POST", "/retrieve", body).body);
    }
    CHECK(a->handle("GET", "/pose/11.png", "").body == b->handle("GET", "/pose/11.png", "").body);
}

TEST_CASE("normalization client configured by URL") {
    test::StubServer stub;
    stub.server().Post("/normalize", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"canonical": "one woman jumping, side view"})", "application/json");
    });
    TempDir dir("norm");
    EngineConfig cfg;
    cfg.normalize_url = stub.start();
    const auto engine = fixture_engine(dir, cfg);
    const auto doc = engine->retrieve_json("a lady leaping, seen from the side");
    CHECK(doc["canonical_query"]["source"] == "normalized");
    CHECK(doc["kind"] == "hit");
    CHECK(doc["entry_id"] == 0);
}

TEST_CASE("http server") {
    TempDir dir("http");
    const auto engine = fixture_engine(dir);
    RunningServer running(*engine);
    auto client = running.client();

    SUBCASE("endpoints match the handlers") {
        const auto health = client.Get("/health");
        REQUIRE(health);
        CHECK(health->status == 200);
        CHECK(health->body == engine->handle("GET", "/health", "").body);

        const std::string body = json{{"prompt", test::fixture_prompts()[5]}}.dump();
        const auto hit = client.Post("/retrieve", body, "application/json");
        REQUIRE(hit);
        CHECK(hit->body == engine->handle("POST", "/retrieve", body).body);

        const auto png = client.Get("/pose/5.png");
        REQUIRE(png);
        CHECK(png->get_header_value("Content-Type") == "image/png");
        CHECK(png->body == engine->handle("GET", "/pose/5.png", "").body);

        const auto missing = client.Get("/pose/5000.png");
        REQUIRE(missing);
        CHECK(missing->status == 404);
    }
    SUBCASE("concurrent retrievals") {
        const auto prompts = test::fixture_prompts();
        std::atomic<int> good{0};
        std::vector<std::thread> threads;
        for (int t = 0; t < 8; ++t) {
            threads.emplace_back([&, t] {
                auto c = running.client();
                for (int k = 0; k < 10; ++k) {
                    const auto i = static_cast<std::size_t>(t * 10 + k);
                    const auto res = c.Post("/retrieve", json{{"prompt", prompts[i]}}.dump(), "application/json");
                    if (res && res->status == 200 && json::parse(res->body)["entry_id"] == i) ++good;
                }
            });
        }
        for (auto& th : threads) th.join();
        CHECK(good.load() == 80);
    }
}

TEST_CASE("binding a busy port fails") {
    TempDir dir("bind");
    const auto engine = fixture_engine(dir);
    RunningServer first(*engine);
    Server second(*engine);
    CHECK_THROWS_AS(second.bind("127.0.0.1", first.port), IoError);
}

TEST_CASE("stop drains in-flight requests") {
    test::StubServer slow;
    slow.server().Post("/normalize", [](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(400));
        res.set_content(R"({"canonical": "two men waving, front view"})", "application/json");
    });
    TempDir dir("drain");
    EngineConfig cfg;
    cfg.normalize_url = slow.start();
    const auto engine = fixture_engine(dir, cfg);

    Server server(*engine);
    const int port = server.bind("127.0.0.1", 0);
    std::thread runner([&] { server.run(); });
    server.wait_until_ready();

    httplib::Result result;
    std::thread request([&] {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(std::chrono::seconds(5));
        result = c.Post("/retrieve", R"({"prompt": "some men saying hello"})", "application/json");
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(150));
    server.stop();
    runner.join();
    request.join();

    REQUIRE(result);
    CHECK(result->status == 200);
    const auto doc = json::parse(result->body);
    CHECK(doc["canonical_query"]["source"] == "normalized");
    CHECK(doc["kind"] == "hit");
}
