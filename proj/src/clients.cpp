// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/clients.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "embops/bytes.hpp"
#include "embops/error.hpp"
#include "embops/rng.hpp"

namespace embops {

std::string to_string(RendererKind kind) {
    switch (kind) {
        case RendererKind::kandinsky: return "kandinsky";
        case RendererKind::ip_adapter: return "ip_adapter";
        case RendererKind::ip_adapter_depth: return "ip_adapter_depth";
        case RendererKind::mock: return "mock";
    }
    return "unknown";
}

RendererKind renderer_kind_from_string(const std::string& s) {
    if (s == "kandinsky") return RendererKind::kandinsky;
    if (s == "ip_adapter") return RendererKind::ip_adapter;
    if (s == "ip_adapter_depth") return RendererKind::ip_adapter_depth;
    if (s == "mock") return RendererKind::mock;
    fail(ErrorKind::config, "unknown renderer '" + s + "'");
}

Image render(const RendererClient& client, const Embedding& e, const RenderOptions& options) {
    if (e.dim() != client.dim()) {
        fail(ErrorKind::invalid_argument, "renderer " + client.id() + " expects d=" + std::to_string(client.dim()) +
                                              ", got " + std::to_string(e.dim()));
    }
    if (options.spatial_condition && !client.supports_spatial_condition()) {
        fail(ErrorKind::invalid_argument, "renderer " + client.id() + " does not accept a spatial condition");
    }
    return client.render_checked(e, options);
}

Image reconstruct(const EncoderClient& encoder, const RendererClient& renderer, const Image& image,
                  const RenderOptions& options) {
    return render(renderer, encoder.encode_image(image), options);
}

namespace {

std::uint64_t image_hash(const Image& image, std::uint64_t salt) {
    ByteWriter w;
    w.u64(salt);
    w.u32(static_cast<std::uint32_t>(image.width));
    w.u32(static_cast<std::uint32_t>(image.height));
    w.u32(static_cast<std::uint32_t>(image.channels));
    w.raw(image.pixels);
    return fnv1a64(w.bytes());
}

Embedding hashed_gaussian(std::uint64_t seed, std::size_t d, SpaceTag tag) {
    Rng rng(seed);
    std::vector<double> v(d);
    for (auto& x : v) x = static_cast<double>(static_cast<float>(rng.normal()));
    return Embedding(std::move(v), tag);
}

}  // namespace

MockEncoder::MockEncoder(std::size_t d, std::string id) : d_(d), id_(std::move(id)) {
    require(d_ > 0, ErrorKind::config, "encoder dimension must be positive");
}

Embedding MockEncoder::encode_image(const Image& image) const {
    require(!image.empty(), ErrorKind::invalid_argument, "cannot encode an empty image");
    return hashed_gaussian(image_hash(image, 0x1a6e), d_, SpaceTag::image);
}

Embedding MockEncoder::encode_text(const std::string& text) const {
    return hashed_gaussian(fnv1a64(text, fnv1a64(std::string_view("text"))), d_, SpaceTag::text);
}

MockRenderer::MockRenderer(std::size_t d, RendererKind kind) : d_(d), kind_(kind) {
    require(d_ > 0, ErrorKind::config, "renderer dimension must be positive");
}

Image MockRenderer::render_checked(const Embedding& e, const RenderOptions& options) const {
    const int band = options.spatial_condition ? 4 : 0;
    Image img = Image::filled(static_cast<int>(d_) * kCellWidth, kStripHeight + band, 3, 0);
    for (std::size_t i = 0; i < d_; ++i) {
        const double t = 0.5 + 0.5 * std::tanh(e[i]);
        const auto r = static_cast<std::uint8_t>(std::lround(255.0 * t));
        const auto b = static_cast<std::uint8_t>(255 - r);
        for (int y = 0; y < kStripHeight; ++y) {
            for (int x = 0; x < kCellWidth; ++x) {
                auto* px = img.at(static_cast<int>(i) * kCellWidth + x, y);
                px[0] = r;
                px[1] = 64;
                px[2] = b;
            }
        }
    }
    if (band > 0) {
        const auto& depth = *options.spatial_condition;
        double sum = 0.0;
        for (auto p : depth.pixels) sum += p;
        const auto mean = static_cast<std::uint8_t>(depth.pixels.empty() ? 0 : std::lround(sum / depth.pixels.size()));
        for (int y = kStripHeight; y < kStripHeight + band; ++y) {
            for (int x = 0; x < img.width; ++x) {
                auto* px = img.at(x, y);
                px[0] = px[1] = px[2] = mean;
            }
        }
    }
    return img;
}

Embedding MockSentenceEncoder::embed(const std::string& sentence) const {
    return hashed_gaussian(fnv1a64(sentence, fnv1a64(std::string_view("sentence"))), d_, SpaceTag::text);
}

Embedding TableSentenceEncoder::embed(const std::string& sentence) const {
    const auto it = table_.find(sentence);
    if (it == table_.end()) {
        fail(ErrorKind::client, "sentence encoder has no entry for '" + sentence + "'");
    }
    return it->second;
}

double ProxyImageSimilarity::similarity(const Image& a, const Image& b) const {
    return cosine(encoder_->encode_image(a), encoder_->encode_image(b));
}

namespace {

std::vector<std::string> split_subjects(const std::string& prompt) {
    std::vector<std::string> out;
    std::size_t start = 0;
    const std::string sep = " and ";
    for (;;) {
        const auto pos = prompt.find(sep, start);
        out.push_back(prompt.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + sep.size();
    }
    return out;
}

void paint(std::uint8_t* px, const std::uint8_t rgb[3]) {
    px[0] = rgb[0];
    px[1] = rgb[1];
    px[2] = rgb[2];
}

}  // namespace

Image MockImageGenerator::generate(const std::string& prompt, std::uint64_t seed, const Image* depth) const {
    Rng rng(mix_seed(fnv1a64(prompt), seed));
    // Pale backdrop, dark subjects: the two never collide.
    const std::uint8_t backdrop[3] = {static_cast<std::uint8_t>(200 + rng.below(56)),
                                      static_cast<std::uint8_t>(200 + rng.below(56)),
                                      static_cast<std::uint8_t>(200 + rng.below(56))};
    Image img = Image::filled(size_, size_, 3, 0);
    for (int y = 0; y < size_; ++y) {
        for (int x = 0; x < size_; ++x) paint(img.at(x, y), backdrop);
    }
    const auto subjects = split_subjects(prompt);
    const auto stripe = static_cast<int>(2 + rng.below(5));
    if (depth != nullptr) {
        require(depth->width == size_ && depth->height == size_ && depth->channels == 1, ErrorKind::client,
                "depth map does not match the generator resolution");
        Rng colour(fnv1a64(prompt));
        const std::uint8_t fg[3] = {static_cast<std::uint8_t>(colour.below(150)),
                                    static_cast<std::uint8_t>(colour.below(150)),
                                    static_cast<std::uint8_t>(colour.below(150))};
        for (int y = 0; y < size_; ++y) {
            for (int x = 0; x < size_; ++x) {
                if (depth->at(x, y)[0] < 128) continue;
                std::uint8_t c[3] = {fg[0], fg[1], fg[2]};
                if (((x + y) / stripe) % 2 == 0) c[1] = static_cast<std::uint8_t>(c[1] / 2);
                paint(img.at(x, y), c);
            }
        }
        return img;
    }
    for (const auto& subject : subjects) {
        Rng colour(fnv1a64(subject));
        const std::uint8_t fg[3] = {static_cast<std::uint8_t>(colour.below(150)),
                                    static_cast<std::uint8_t>(colour.below(150)),
                                    static_cast<std::uint8_t>(colour.below(150))};
        const int w = size_ / 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size_ / 3)));
        const int h = size_ / 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size_ / 3)));
        const int x0 = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size_ - w - 1)));
        const int y0 = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size_ - h - 1)));
        for (int y = y0; y < y0 + h; ++y) {
            for (int x = x0; x < x0 + w; ++x) paint(img.at(x, y), fg);
        }
    }
    return img;
}

namespace {

bool differs_from_corner(const Image& image, int x, int y) {
    const auto* corner = image.at(0, 0);
    const auto* px = image.at(x, y);
    int dist = 0;
    for (int c = 0; c < std::min(image.channels, 3); ++c) dist += std::abs(int{px[c]} - int{corner[c]});
    return dist > 30;
}

}  // namespace

Image MockDepthEstimator::estimate(const Image& image) const {
    Image out = Image::filled(image.width, image.height, 1, 0);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (differs_from_corner(image, x, y)) out.at(x, y)[0] = 255;
        }
    }
    return out;
}

std::vector<Box> MockDetector::detect(const Image& image, const std::string& prompt) const {
    require(!image.empty(), ErrorKind::client, "detector received an empty image");
    Rng rng(mix_seed(image_hash(image, 0xde7), fnv1a64(prompt)));
    if (rng.uniform() < miss_rate_) return {};
    const auto span = [&](int extent) {
        return std::max(2, static_cast<int>(std::lround(extent * (0.3 + 0.3 * rng.uniform()))));
    };
    Box b;
    const int w = span(image.width);
    const int h = span(image.height);
    b.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(image.width - w + 1)));
    b.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(image.height - h + 1)));
    b.x1 = b.x0 + w;
    b.y1 = b.y0 + h;
    b.score = 0.5 + 0.5 * rng.uniform();
    return {b};
}

Image MockBackgroundRemover::remove_background(const Image& image) const {
    Image mask = Image::filled(image.width, image.height, 1, 0);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (differs_from_corner(image, x, y)) mask.at(x, y)[0] = 255;
        }
    }
    if (mask_area(mask) > 0) return mask;
    const double cx = image.width / 2.0;
    const double cy = image.height / 2.0;
    const double rx = image.width / 4.0;
    const double ry = image.height / 4.0;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double dx = (x + 0.5 - cx) / rx;
            const double dy = (y + 0.5 - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) mask.at(x, y)[0] = 255;
        }
    }
    return mask;
}

Image MockInpainter::inpaint(const Image& image, const Image& mask, std::uint64_t /*seed*/) const {
    require(mask.width == image.width && mask.height == image.height && mask.channels == 1, ErrorKind::client,
            "inpainting mask does not match the image");
    double sum[4] = {0, 0, 0, 0};
    long n = 0;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (mask.at(x, y)[0] != 0) continue;
            for (int c = 0; c < image.channels; ++c) sum[c] += image.at(x, y)[c];
            ++n;
        }
    }
    Image out = image;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (mask.at(x, y)[0] == 0) continue;
            for (int c = 0; c < image.channels; ++c) {
                out.at(x, y)[c] = n == 0 ? 128 : static_cast<std::uint8_t>(std::lround(sum[c] / n));
            }
        }
    }
    return out;
}

DatagenClients make_mock_datagen_clients(std::size_t d, double detector_miss_rate) {
    DatagenClients c;
    c.generator = std::make_shared<MockImageGenerator>();
    c.depth = std::make_shared<MockDepthEstimator>();
    c.detector = std::make_shared<MockDetector>(detector_miss_rate);
    c.background_remover = std::make_shared<MockBackgroundRemover>();
    c.inpainter = std::make_shared<MockInpainter>();
    c.encoder = std::make_shared<MockEncoder>(d);
    return c;
}

std::shared_ptr<const EncoderClient> make_encoder(const std::string& spec, std::size_t default_dim) {
    if (spec.empty() || spec == "mock") return std::make_shared<MockEncoder>(default_dim);
    if (spec.rfind("mock:", 0) == 0) {
        const auto d = std::strtoull(spec.c_str() + 5, nullptr, 10);
        require(d > 0, ErrorKind::config, "bad encoder spec '" + spec + "'");
        return std::make_shared<MockEncoder>(static_cast<std::size_t>(d));
    }
    if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) return std::make_shared<HttpEncoder>(spec);
    fail(ErrorKind::config, "bad encoder spec '" + spec + "' (expected mock, mock:<d> or a URL)");
}

std::shared_ptr<const RendererClient> make_renderer(const std::string& spec, std::size_t d) {
    if (spec.empty() || spec == "mock") return std::make_shared<MockRenderer>(d);
    if (spec.rfind("mock:", 0) == 0) return std::make_shared<MockRenderer>(d, renderer_kind_from_string(spec.substr(5)));
    const auto at = spec.find('@');
    if (at != std::string::npos) {
        return std::make_shared<HttpRenderer>(renderer_kind_from_string(spec.substr(0, at)), d, spec.substr(at + 1));
    }
    fail(ErrorKind::config, "bad renderer spec '" + spec + "' (expected mock, mock:<kind> or <kind>@<url>)");
}

std::shared_ptr<const EncoderClient> encoder_from_env(std::size_t default_dim) {
    const char* v = std::getenv("POPS_ENCODER");
    return make_encoder(v ? v : "mock", default_dim);
}

std::shared_ptr<const RendererClient> renderer_from_env(std::size_t d) {
    const char* v = std::getenv("POPS_RENDERER");
    return make_renderer(v ? v : "mock", d);
}

}  // namespace embops
