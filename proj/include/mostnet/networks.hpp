#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mostnet/layers.hpp"
#include "mostnet/memory.hpp"
#include "mostnet/style_injection.hpp"

namespace mostnet {

// Layer geometry. The defaults are the desk-scale network: 64 feature
// channels at a quarter of the input resolution.
struct NetworkConfig {
    std::size_t feature_channels = 64;
    std::size_t encoder_width1 = 16;
    std::size_t encoder_width2 = 32;
    std::size_t encoder_blocks = 2;  // per downsampling stage
    std::size_t decoder_blocks = 3;
    std::size_t si_blocks = 3;
    std::size_t style_hidden = 64;
    std::size_t disc_width = 32;

    bool operator==(const NetworkConfig&) const = default;
};

// Stem conv, then two stride-2 stages each followed by residual blocks; every
// plain conv is instance-normalized before its activation. Maps in x H x W to
// c x H/4 x W/4.
template <class T>
struct Encoder {
    Conv2d<T> stem;
    Conv2d<T> down1;
    std::vector<ResBlock<T>> blocks1;
    Conv2d<T> down2;
    std::vector<ResBlock<T>> blocks2;

    static Encoder make(std::size_t in_channels, const NetworkConfig& cfg, Rng& rng) {
        Encoder e;
        e.stem = Conv2d<T>::same3x3(in_channels, cfg.encoder_width1, rng);
        e.down1 = Conv2d<T>::same3x3(cfg.encoder_width1, cfg.encoder_width2, rng, 2);
        for (std::size_t i = 0; i < cfg.encoder_blocks; ++i) e.blocks1.push_back(ResBlock<T>::make(cfg.encoder_width2, rng));
        e.down2 = Conv2d<T>::same3x3(cfg.encoder_width2, cfg.feature_channels, rng, 2);
        for (std::size_t i = 0; i < cfg.encoder_blocks; ++i)
            e.blocks2.push_back(ResBlock<T>::make(cfg.feature_channels, rng));
        return e;
    }

    Tensor<T> operator()(const Tensor<T>& image) const {
        if (image.rank() != 3 || image.dim(0) != stem.in_channels()) {
            throw ShapeError("encoder: expected " + std::to_string(stem.in_channels()) + " x H x W, got " +
                             shape_str(image.shape()));
        }
        if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0) {
            throw ShapeError("encoder: extents of " + shape_str(image.shape()) + " must be divisible by 4");
        }
        auto x = lrelu(instance_normalize(stem(image)));
        x = lrelu(instance_normalize(down1(x)));
        for (const auto& b : blocks1) x = b(x);
        x = lrelu(instance_normalize(down2(x)));
        for (const auto& b : blocks2) x = b(x);
        return x;
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        stem.collect(out, prefix + ".stem");
        down1.collect(out, prefix + ".down1");
        for (std::size_t i = 0; i < blocks1.size(); ++i) blocks1[i].collect(out, prefix + ".blocks1." + std::to_string(i));
        down2.collect(out, prefix + ".down2");
        for (std::size_t i = 0; i < blocks2.size(); ++i) blocks2[i].collect(out, prefix + ".blocks2." + std::to_string(i));
    }
};

// Residual blocks, two (nearest x2 upsample + conv) stages, output conv and
// tanh. Maps c x h x w to 1 x 4h x 4w in [-1, 1]. Instance normalization
// ahead of every activation keeps the tanh input from drifting into
// saturation during training.
template <class T>
struct Decoder {
    std::vector<ResBlock<T>> blocks;
    Conv2d<T> up1;
    Conv2d<T> up2;
    Conv2d<T> out;

    static Decoder make(const NetworkConfig& cfg, Rng& rng) {
        Decoder d;
        for (std::size_t i = 0; i < cfg.decoder_blocks; ++i) d.blocks.push_back(ResBlock<T>::make(cfg.feature_channels, rng));
        d.up1 = Conv2d<T>::same3x3(cfg.feature_channels, cfg.encoder_width2, rng);
        d.up2 = Conv2d<T>::same3x3(cfg.encoder_width2, cfg.encoder_width1, rng);
        d.out = Conv2d<T>::same3x3(cfg.encoder_width1, 1, rng);
        return d;
    }

    Tensor<T> operator()(const Tensor<T>& z) const {
        auto x = z;
        for (const auto& b : blocks) x = b(x);
        x = lrelu(instance_normalize(up1(upsample_nearest2x(lrelu(instance_normalize(x))))));
        x = lrelu(instance_normalize(up2(upsample_nearest2x(x))));
        return tanh(out(x));
    }

    void collect(ParamList<T>& out_params, const std::string& prefix) const {
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out_params, prefix + ".blocks." + std::to_string(i));
        up1.collect(out_params, prefix + ".up1");
        up2.collect(out_params, prefix + ".up2");
        out.collect(out_params, prefix + ".out");
    }
};

template <class T>
struct GeneratorTrainOutput {
    std::vector<Tensor<T>> fake;             // 1 x H x W in [-1, 1]
    std::vector<Tensor<T>> photo_features;   // F_p
    std::vector<Tensor<T>> sketch_features;  // F_s
    std::vector<Tensor<T>> retrieved;        // F_s hat
    std::vector<SlotSet<T>> photo_slots;
    std::vector<SlotSet<T>> sketch_slots;
};

template <class T>
struct Generator {
    NetworkConfig config;
    Encoder<T> photo_encoder;
    Encoder<T> sketch_encoder;
    std::vector<SIResBlock<T>> si_blocks;
    Decoder<T> decoder;

    static Generator make(const NetworkConfig& cfg, std::uint64_t seed) {
        Generator g;
        g.config = cfg;
        Rng pe(seed, 1), se(seed, 2), si(seed, 3), dec(seed, 4);
        g.photo_encoder = Encoder<T>::make(3, cfg, pe);
        g.sketch_encoder = Encoder<T>::make(1, cfg, se);
        for (std::size_t i = 0; i < cfg.si_blocks; ++i)
            g.si_blocks.push_back(
                SIResBlock<T>::make(cfg.feature_channels, cfg.feature_channels, cfg.feature_channels, cfg.style_hidden, si));
        g.decoder = Decoder<T>::make(cfg, dec);
        return g;
    }

    Tensor<T> photo_encode(const Tensor<T>& photo) const { return photo_encoder(photo); }
    Tensor<T> sketch_encode(const Tensor<T>& sketch) const { return sketch_encoder(sketch); }

    // Style injection of the retrieved map into the photo features, then decoding.
    Tensor<T> synthesize(const Tensor<T>& photo_features, const Tensor<T>& retrieved) const {
        auto z = photo_features;
        for (const auto& block : si_blocks) z = block(z, retrieved);
        return decoder(z);
    }

    // Training path for a batch of aligned pairs: encode both domains, update
    // the memory once from all slots of the batch, read the updated memory
    // with the photo slots, inject and decode.
    GeneratorTrainOutput<T> forward_train(const std::vector<Tensor<T>>& photos, const std::vector<Tensor<T>>& sketches,
                                          MemoryDictionary<T>& memory) const {
        if (photos.size() != sketches.size() || photos.empty()) {
            throw ShapeError("generator: need equally many photos and sketches, got " + std::to_string(photos.size()) +
                             " and " + std::to_string(sketches.size()));
        }
        GeneratorTrainOutput<T> out;
        for (std::size_t b = 0; b < photos.size(); ++b) {
            if (photos[b].dim(1) != sketches[b].dim(1) || photos[b].dim(2) != sketches[b].dim(2)) {
                throw ShapeError("generator: photo " + shape_str(photos[b].shape()) + " and sketch " +
                                 shape_str(sketches[b].shape()) + " are not aligned");
            }
            out.photo_features.push_back(photo_encode(photos[b]));
            out.sketch_features.push_back(sketch_encode(sketches[b]));
            out.photo_slots.push_back(slots_from_map(out.photo_features.back()));
            out.sketch_slots.push_back(slots_from_map(out.sketch_features.back()));
        }
        update_memory(memory, std::span<const SlotSet<T>>(out.photo_slots), std::span<const SlotSet<T>>(out.sketch_slots));
        for (std::size_t b = 0; b < photos.size(); ++b) {
            out.retrieved.push_back(map_from_slots(attentive_read(memory, out.photo_slots[b])));
            out.fake.push_back(synthesize(out.photo_features[b], out.retrieved.back()));
        }
        return out;
    }

    GeneratorTrainOutput<T> forward_train(const Tensor<T>& photo, const Tensor<T>& sketch, MemoryDictionary<T>& memory) const {
        return forward_train(std::vector<Tensor<T>>{photo}, std::vector<Tensor<T>>{sketch}, memory);
    }

    // Photo-only path: the memory is read, never written.
    Tensor<T> forward_infer(const Tensor<T>& photo, const MemoryDictionary<T>& memory) const {
        const auto features = photo_encode(photo);
        const auto retrieved = map_from_slots(attentive_read(memory, slots_from_map(features)));
        return synthesize(features, retrieved);
    }

    void collect(ParamList<T>& out, const std::string& prefix = "generator") const {
        photo_encoder.collect(out, prefix + ".photo_encoder");
        sketch_encoder.collect(out, prefix + ".sketch_encoder");
        for (std::size_t i = 0; i < si_blocks.size(); ++i) si_blocks[i].collect(out, prefix + ".si." + std::to_string(i));
        decoder.collect(out, prefix + ".decoder");
    }

    ParamList<T> parameters() const {
        ParamList<T> p;
        collect(p);
        return p;
    }
};

// Patch critic over the channel-concatenated (photo, sketch) pair: three
// 4x4 stride-2 stages and a 3x3 valid conv to one sigmoid score per patch.
template <class T>
struct Discriminator {
    std::vector<Conv2d<T>> stages;
    Conv2d<T> head;

    static Discriminator make(const NetworkConfig& cfg, std::uint64_t seed) {
        Rng rng(seed, 5);
        Discriminator d;
        std::size_t in = 4, width = cfg.disc_width;
        for (int i = 0; i < 3; ++i) {
            d.stages.push_back(Conv2d<T>::make(in, width, 4, rng, Conv2dOptions{2, 1}));
            in = width;
            width *= 2;
        }
        d.head = Conv2d<T>::make(in, 1, 3, rng, Conv2dOptions{1, 0});
        return d;
    }

    Tensor<T> operator()(const Tensor<T>& photo, const Tensor<T>& sketch) const {
        if (photo.rank() != 3 || sketch.rank() != 3 || photo.dim(0) != 3 || sketch.dim(0) != 1 ||
            photo.dim(1) != sketch.dim(1) || photo.dim(2) != sketch.dim(2)) {
            throw ShapeError("discriminate: photo " + shape_str(photo.shape()) + " and sketch " +
                             shape_str(sketch.shape()) + " are not an aligned 3+1 channel pair");
        }
        auto x = concat(std::vector<Tensor<T>>{photo, sketch});
        for (const auto& s : stages) x = lrelu(s(x));
        return sigmoid(head(x));
    }

    void collect(ParamList<T>& out, const std::string& prefix = "discriminator") const {
        for (std::size_t i = 0; i < stages.size(); ++i) stages[i].collect(out, prefix + ".stage" + std::to_string(i));
        head.collect(out, prefix + ".head");
    }

    ParamList<T> parameters() const {
        ParamList<T> p;
        collect(p);
        return p;
    }
};

template <class T>
Tensor<T> discriminate(const Discriminator<T>& d, const Tensor<T>& photo, const Tensor<T>& sketch) {
    return d(photo, sketch);
}

}  // namespace mostnet
