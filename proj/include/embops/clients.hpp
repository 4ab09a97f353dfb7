// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embops/embedding.hpp"
#include "embops/image.hpp"

namespace embops {

// ---------------------------------------------------------------------------
// Encoders and renderers
// ---------------------------------------------------------------------------

class EncoderClient {
public:
    virtual ~EncoderClient() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual std::size_t dim() const = 0;
    [[nodiscard]] virtual Embedding encode_image(const Image& image) const = 0;
    [[nodiscard]] virtual Embedding encode_text(const std::string& text) const = 0;
};

enum class RendererKind { kandinsky, ip_adapter, ip_adapter_depth, mock };

std::string to_string(RendererKind kind);
RendererKind renderer_kind_from_string(const std::string& s);

struct RenderOptions {
    std::uint64_t seed = 0;
    std::optional<Image> spatial_condition;  // depth map; ip_adapter_depth only
};

class RendererClient {
public:
    virtual ~RendererClient() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual RendererKind kind() const = 0;
    [[nodiscard]] virtual std::size_t dim() const = 0;
    [[nodiscard]] virtual bool supports_spatial_condition() const { return kind() == RendererKind::ip_adapter_depth; }

protected:
    friend Image render(const RendererClient&, const Embedding&, const RenderOptions&);
    /// Called only after dimension and capability checks pass.
    [[nodiscard]] virtual Image render_checked(const Embedding& e, const RenderOptions& options) const = 0;
};

/// Validates dimension and options, then delegates to the client.
Image render(const RendererClient& client, const Embedding& e, const RenderOptions& options = {});

/// render(encode_image(image)).
Image reconstruct(const EncoderClient& encoder, const RendererClient& renderer, const Image& image,
                  const RenderOptions& options = {});

/// Hash-seeded Gaussian embeddings; byte-identical inputs give identical bits.
class MockEncoder final : public EncoderClient {
public:
    explicit MockEncoder(std::size_t d = 16, std::string id = "mock-encoder");
    [[nodiscard]] std::string id() const override { return id_; }
    [[nodiscard]] std::size_t dim() const override { return d_; }
    [[nodiscard]] Embedding encode_image(const Image& image) const override;
    [[nodiscard]] Embedding encode_text(const std::string& text) const override;

private:
    std::size_t d_;
    std::string id_;
};

/// Heat-strip visualisation: one 8x16 cell per component, red = positive.
class MockRenderer final : public RendererClient {
public:
    explicit MockRenderer(std::size_t d = 16, RendererKind kind = RendererKind::mock);
    [[nodiscard]] std::string id() const override { return "mock-" + to_string(kind_); }
    [[nodiscard]] RendererKind kind() const override { return kind_; }
    [[nodiscard]] std::size_t dim() const override { return d_; }

    static constexpr int kCellWidth = 8;
    static constexpr int kStripHeight = 16;

protected:
    [[nodiscard]] Image render_checked(const Embedding& e, const RenderOptions& options) const override;

private:
    std::size_t d_;
    RendererKind kind_;
};

// ---------------------------------------------------------------------------
// Evaluation clients
// ---------------------------------------------------------------------------

class SentenceEncoderClient {
public:
    virtual ~SentenceEncoderClient() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual Embedding embed(const std::string& sentence) const = 0;
};

class MockSentenceEncoder final : public SentenceEncoderClient {
public:
    explicit MockSentenceEncoder(std::size_t d = 32) : d_(d) {}
    [[nodiscard]] std::string id() const override { return "mock-sentence"; }
    [[nodiscard]] Embedding embed(const std::string& sentence) const override;

private:
    std::size_t d_;
};

/// Fixed lookup table; unknown sentences are a client error.
class TableSentenceEncoder final : public SentenceEncoderClient {
public:
    explicit TableSentenceEncoder(std::map<std::string, Embedding> table) : table_(std::move(table)) {}
    [[nodiscard]] std::string id() const override { return "table-sentence"; }
    [[nodiscard]] Embedding embed(const std::string& sentence) const override;

private:
    std::map<std::string, Embedding> table_;
};

class ImageSimilarityClient {
public:
    virtual ~ImageSimilarityClient() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    /// True when the value is a stand-in for the perceptual metric.
    [[nodiscard]] virtual bool is_proxy() const = 0;
    [[nodiscard]] virtual double similarity(const Image& a, const Image& b) const = 0;
};

/// Cosine of encoder image embeddings, reported as "proxy".
class ProxyImageSimilarity final : public ImageSimilarityClient {
public:
    explicit ProxyImageSimilarity(std::shared_ptr<const EncoderClient> encoder) : encoder_(std::move(encoder)) {}
    [[nodiscard]] std::string id() const override { return "proxy"; }
    [[nodiscard]] bool is_proxy() const override { return true; }
    [[nodiscard]] double similarity(const Image& a, const Image& b) const override;

private:
    std::shared_ptr<const EncoderClient> encoder_;
};

// ---------------------------------------------------------------------------
// Data-generation clients
// ---------------------------------------------------------------------------

class ImageGenerator {
public:
    virtual ~ImageGenerator() = default;
    /// `depth` switches to the depth-conditioned model.
    [[nodiscard]] virtual Image generate(const std::string& prompt, std::uint64_t seed,
                                         const Image* depth = nullptr) const = 0;
};

class DepthEstimator {
public:
    virtual ~DepthEstimator() = default;
    [[nodiscard]] virtual Image estimate(const Image& image) const = 0;
};

class Detector {
public:
    virtual ~Detector() = default;
    /// Boxes sorted by descending score; empty when nothing is found.
    [[nodiscard]] virtual std::vector<Box> detect(const Image& image, const std::string& prompt) const = 0;
};

class BackgroundRemover {
public:
    virtual ~BackgroundRemover() = default;
    /// Single-channel mask, 255 = object.
    [[nodiscard]] virtual Image remove_background(const Image& image) const = 0;
};

class Inpainter {
public:
    virtual ~Inpainter() = default;
    [[nodiscard]] virtual Image inpaint(const Image& image, const Image& mask, std::uint64_t seed) const = 0;
};

/// Prompt- and seed-hashed scenes: a flat backdrop with one rectangle per
/// " and "-separated subject. With a depth map the subject follows the
/// depth silhouette so object and target stay aligned.
class MockImageGenerator final : public ImageGenerator {
public:
    explicit MockImageGenerator(int size = 64) : size_(size) {}
    [[nodiscard]] Image generate(const std::string& prompt, std::uint64_t seed, const Image* depth) const override;

private:
    int size_;
};

/// Luminance distance from the corner colour, as an 8-bit map.
class MockDepthEstimator final : public DepthEstimator {
public:
    [[nodiscard]] Image estimate(const Image& image) const override;
};

/// Hash-placed box covering 30-60% of each side; misses with the given rate.
class MockDetector final : public Detector {
public:
    explicit MockDetector(double miss_rate = 0.0) : miss_rate_(miss_rate) {}
    [[nodiscard]] std::vector<Box> detect(const Image& image, const std::string& prompt) const override;

private:
    double miss_rate_;
};

/// Pixels differing from the corner colour; an empty result falls back to a
/// centred ellipse.
class MockBackgroundRemover final : public BackgroundRemover {
public:
    [[nodiscard]] Image remove_background(const Image& image) const override;
};

/// Fills masked pixels with the mean unmasked colour.
class MockInpainter final : public Inpainter {
public:
    [[nodiscard]] Image inpaint(const Image& image, const Image& mask, std::uint64_t seed) const override;
};

struct DatagenClients {
    std::shared_ptr<const ImageGenerator> generator;
    std::shared_ptr<const DepthEstimator> depth;
    std::shared_ptr<const Detector> detector;
    std::shared_ptr<const BackgroundRemover> background_remover;
    std::shared_ptr<const Inpainter> inpainter;
    std::shared_ptr<const EncoderClient> encoder;
};

DatagenClients make_mock_datagen_clients(std::size_t d, double detector_miss_rate = 0.0);

// ---------------------------------------------------------------------------
// HTTP adapters
// ---------------------------------------------------------------------------

struct HttpOptions {
    std::chrono::milliseconds timeout{30000};
    int retries = 2;  // additional attempts after the first
    std::chrono::milliseconds backoff{250};
};

/// POSTs JSON, retrying on transport failure and 5xx. Never falls back to a mock.
class HttpTransport {
public:
    HttpTransport(std::string base_url, HttpOptions options = {});
    [[nodiscard]] nlohmann::json post(const std::string& path, const nlohmann::json& body) const;
    [[nodiscard]] const std::string& base_url() const noexcept { return base_url_; }

private:
    std::string base_url_;
    HttpOptions options_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Endpoints: /info -> {id, d}; /encode_image {image_png_b64}; /encode_text {text}; both -> {embedding}.
class HttpEncoder final : public EncoderClient {
public:
    explicit HttpEncoder(std::string base_url, HttpOptions options = {});
    [[nodiscard]] std::string id() const override { return id_; }
    [[nodiscard]] std::size_t dim() const override { return d_; }
    [[nodiscard]] Embedding encode_image(const Image& image) const override;
    [[nodiscard]] Embedding encode_text(const std::string& text) const override;

private:
    HttpTransport http_;
    std::string id_;
    std::size_t d_ = 0;
};

/// Endpoint: /render {embedding, seed, depth_png_b64?} -> {image_png_b64}.
class HttpRenderer final : public RendererClient {
public:
    HttpRenderer(RendererKind kind, std::size_t d, std::string base_url, HttpOptions options = {});
    [[nodiscard]] std::string id() const override { return to_string(kind_) + "@" + http_.base_url(); }
    [[nodiscard]] RendererKind kind() const override { return kind_; }
    [[nodiscard]] std::size_t dim() const override { return d_; }

protected:
    [[nodiscard]] Image render_checked(const Embedding& e, const RenderOptions& options) const override;

private:
    RendererKind kind_;
    std::size_t d_;
    HttpTransport http_;
};

/// /embed_sentence {text} -> {embedding}.
class HttpSentenceEncoder final : public SentenceEncoderClient {
public:
    explicit HttpSentenceEncoder(std::string base_url, HttpOptions options = {}) : http_(std::move(base_url), options) {}
    [[nodiscard]] std::string id() const override { return "sentence@" + http_.base_url(); }
    [[nodiscard]] Embedding embed(const std::string& sentence) const override;

private:
    HttpTransport http_;
};

/// One service exposing /generate, /depth, /detect, /remove_background, /inpaint.
DatagenClients make_http_datagen_clients(const std::string& base_url, std::shared_ptr<const EncoderClient> encoder,
                                         HttpOptions options = {});

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

/// "mock", "mock:<d>" or an http(s) URL.
std::shared_ptr<const EncoderClient> make_encoder(const std::string& spec, std::size_t default_dim);
/// "mock", "mock:<kind>" or "<kind>@<url>".
std::shared_ptr<const RendererClient> make_renderer(const std::string& spec, std::size_t d);

/// Reads POPS_ENCODER (default "mock").
std::shared_ptr<const EncoderClient> encoder_from_env(std::size_t default_dim);
/// Reads POPS_RENDERER (default "mock").
std::shared_ptr<const RendererClient> renderer_from_env(std::size_t d);

}  // namespace embops
