// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <thread>

#include <httplib.h>

#include "embops/clients.hpp"
#include "embops/error.hpp"

namespace embops {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    const std::size_t rest = bytes.size() - i;
    if (rest > 0) {
        std::uint32_t v = std::uint32_t{bytes[i]} << 16;
        if (rest == 2) v |= std::uint32_t{bytes[i + 1]} << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::array<int, 256> lut{};
    lut.fill(-1);
    for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kAlphabet[i])] = i;
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (const char ch : text) {
        if (ch == '=' || ch == '\n' || ch == '\r') continue;
        const int v = lut[static_cast<unsigned char>(ch)];
        if (v < 0) fail(ErrorKind::format, "invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

HttpTransport::HttpTransport(std::string base_url, HttpOptions options)
    : base_url_(std::move(base_url)), options_(options) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    if (base_url_.rfind("https://", 0) == 0) {
        fail(ErrorKind::config, "https endpoints are not supported by this build: " + base_url_);
    }
    require(base_url_.rfind("http://", 0) == 0, ErrorKind::config, "endpoint must be an http URL: " + base_url_);
}

nlohmann::json HttpTransport::post(const std::string& path, const nlohmann::json& body) const {
    httplib::Client cli(base_url_);
    const auto secs = [](std::chrono::milliseconds ms) {
        return std::make_pair(static_cast<time_t>(ms.count() / 1000), static_cast<time_t>((ms.count() % 1000) * 1000));
    };
    const auto [s, us] = secs(options_.timeout);
    cli.set_connection_timeout(s, us);
    cli.set_read_timeout(s, us);
    cli.set_write_timeout(s, us);
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(options_.backoff * attempt);
        auto res = cli.Post(path, payload, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            fail(ErrorKind::client, base_url_ + path + " returned HTTP " + std::to_string(res->status) + ": " +
                                        res->body.substr(0, 200));
        }
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::client, base_url_ + path + " returned malformed JSON: " + e.what());
        }
    }
    fail(ErrorKind::client, base_url_ + path + " unavailable after " + std::to_string(options_.retries + 1) +
                                " attempts: " + last_error);
}

namespace {

Embedding embedding_from(const nlohmann::json& j, std::size_t d, SpaceTag tag, const std::string& who) {
    try {
        auto values = j.at("embedding").get<std::vector<double>>();
        if (d != 0 && values.size() != d) {
            fail(ErrorKind::client, who + " returned d=" + std::to_string(values.size()) + ", expected " +
                                        std::to_string(d));
        }
        return Embedding(std::move(values), tag);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::client, who + ": bad response: " + e.what());
    }
}

Image image_from(const nlohmann::json& j, const char* key, const std::string& who) {
    if (!j.contains(key) || !j[key].is_string()) {
        fail(ErrorKind::client, who + ": response lacks '" + key + "'");
    }
    return decode_png(base64_decode(j[key].get<std::string>()));
}

std::string png_b64(const Image& image) { return base64_encode(encode_png(image)); }

}  // namespace

HttpEncoder::HttpEncoder(std::string base_url, HttpOptions options) : http_(std::move(base_url), options) {
    const auto info = http_.post("/info", nlohmann::json::object());
    try {
        id_ = info.at("id").get<std::string>();
        d_ = info.at("d").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::client, "encoder /info: bad response: " + std::string(e.what()));
    }
    require(d_ > 0, ErrorKind::client, "encoder reported d=0");
}

Embedding HttpEncoder::encode_image(const Image& image) const {
    return embedding_from(http_.post("/encode_image", {{"image_png_b64", png_b64(image)}}), d_, SpaceTag::image,
                          "encoder");
}

Embedding HttpEncoder::encode_text(const std::string& text) const {
    return embedding_from(http_.post("/encode_text", {{"text", text}}), d_, SpaceTag::text, "encoder");
}

HttpRenderer::HttpRenderer(RendererKind kind, std::size_t d, std::string base_url, HttpOptions options)
    : kind_(kind), d_(d), http_(std::move(base_url), options) {}

Image HttpRenderer::render_checked(const Embedding& e, const RenderOptions& options) const {
    nlohmann::json body{{"renderer", to_string(kind_)},
                        {"embedding", std::vector<double>(e.values().begin(), e.values().end())},
                        {"seed", options.seed}};
    if (options.spatial_condition) body["depth_png_b64"] = png_b64(*options.spatial_condition);
    return image_from(http_.post("/render", body), "image_png_b64", id());
}

Embedding HttpSentenceEncoder::embed(const std::string& sentence) const {
    return embedding_from(http_.post("/embed_sentence", {{"text", sentence}}), 0, SpaceTag::text, id());
}

namespace {

class HttpGenerator final : public ImageGenerator {
public:
    explicit HttpGenerator(std::shared_ptr<HttpTransport> http) : http_(std::move(http)) {}
    Image generate(const std::string& prompt, std::uint64_t seed, const Image* depth) const override {
        nlohmann::json body{{"prompt", prompt}, {"seed", seed}};
        if (depth) body["depth_png_b64"] = png_b64(*depth);
        return image_from(http_->post("/generate", body), "image_png_b64", "generator");
    }

private:
    std::shared_ptr<HttpTransport> http_;
};

class HttpDepth final : public DepthEstimator {
public:
    explicit HttpDepth(std::shared_ptr<HttpTransport> http) : http_(std::move(http)) {}
    Image estimate(const Image& image) const override {
        return image_from(http_->post("/depth", {{"image_png_b64", png_b64(image)}}), "depth_png_b64", "depth");
    }

private:
    std::shared_ptr<HttpTransport> http_;
};

class HttpDetector final : public Detector {
public:
    explicit HttpDetector(std::shared_ptr<HttpTransport> http) : http_(std::move(http)) {}
    std::vector<Box> detect(const Image& image, const std::string& prompt) const override {
        const auto res = http_->post("/detect", {{"image_png_b64", png_b64(image)}, {"prompt", prompt}});
        std::vector<Box> boxes;
        try {
            for (const auto& b : res.at("boxes")) {
                boxes.push_back(Box{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>(),
                                    b.size() > 4 ? b.at(4).get<double>() : 1.0});
            }
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::client, std::string("detector: bad response: ") + e.what());
        }
        std::stable_sort(boxes.begin(), boxes.end(), [](const Box& a, const Box& b) { return a.score > b.score; });
        return boxes;
    }

private:
    std::shared_ptr<HttpTransport> http_;
};

class HttpBackgroundRemover final : public BackgroundRemover {
public:
    explicit HttpBackgroundRemover(std::shared_ptr<HttpTransport> http) : http_(std::move(http)) {}
    Image remove_background(const Image& image) const override {
        return image_from(http_->post("/remove_background", {{"image_png_b64", png_b64(image)}}), "mask_png_b64",
                          "background removal");
    }

private:
    std::shared_ptr<HttpTransport> http_;
};

class HttpInpainter final : public Inpainter {
public:
    explicit HttpInpainter(std::shared_ptr<HttpTransport> http) : http_(std::move(http)) {}
    Image inpaint(const Image& image, const Image& mask, std::uint64_t seed) const override {
        return image_from(http_->post("/inpaint", {{"image_png_b64", png_b64(image)},
                                                   {"mask_png_b64", png_b64(mask)},
                                                   {"seed", seed}}),
                          "image_png_b64", "inpainting");
    }

private:
    std::shared_ptr<HttpTransport> http_;
};

}  // namespace

DatagenClients make_http_datagen_clients(const std::string& base_url, std::shared_ptr<const EncoderClient> encoder,
                                         HttpOptions options) {
    auto http = std::make_shared<HttpTransport>(base_url, options);
    DatagenClients c;
    c.generator = std::make_shared<HttpGenerator>(http);
    c.depth = std::make_shared<HttpDepth>(http);
    c.detector = std::make_shared<HttpDetector>(http);
    c.background_remover = std::make_shared<HttpBackgroundRemover>(http);
    c.inpainter = std::make_shared<HttpInpainter>(http);
    c.encoder = std::move(encoder);
    return c;
}

}  // namespace embops
