#include "vithash/model.hpp"

namespace vith {

Tensor make_batch(const Dataset& ds, const std::vector<std::uint32_t>& indices,
                  const ModelConfig& cfg) {
    if (indices.empty()) throw ContractError("make_batch: empty index list");
    if (ds.channels != cfg.encoder.channels)
        throw ConfigError("make_batch: dataset has " + std::to_string(ds.channels) +
                          " channels, model wants " + std::to_string(cfg.encoder.channels));
    const std::size_t b = indices.size();
    auto out = Tensor::zeros({b, cfg.encoder.n_patches(), cfg.encoder.patch_dim()});
    std::vector<float> img;
    for (std::size_t i = 0; i < b; ++i) {
        if (indices[i] >= ds.items.size())
            throw ContractError("make_batch: index " + std::to_string(indices[i]) +
                                " out of range");
        const auto& item = ds.items[indices[i]];
        img = resize_bilinear(item.image, ds.image_size, cfg.encoder.image_size, ds.channels);
        cfg.norm.apply(img, ds.channels);
        auto patches = patchify<float>(img, cfg.encoder.image_size, cfg.encoder.patch_size,
                                       ds.channels);
        std::copy(patches.data().begin(), patches.data().end(),
                  out.data().begin() + i * patches.numel());
    }
    return out;
}

BinaryCodeSet encode_split(const Model& model, const Dataset& ds,
                           const std::vector<std::uint32_t>& indices, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("encode_split: zero batch size");
    if (indices.empty()) throw ContractError("encode_split: empty split");
    BinaryCodeSet codes;
    codes.bits = model.config.head.bits;
    NoGradGuard no_grad;
    const ForwardCtx ctx{false, 0, 0};  // eval mode: no dropout, step-free
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, indices.size() - start);
        std::vector<std::uint32_t> chunk(indices.begin() + start, indices.begin() + start + n);
        auto patches = make_batch(ds, chunk, model.config);
        auto te = encode_patches_batch(patches, model.encoder, ctx, false).te;
        auto h = hash_forward_batch(te, model.head, ctx);
        const std::size_t k = model.config.head.bits;
        for (std::size_t i = 0; i < n; ++i) {
            auto words = binarize(h.data().data() + i * k, k);
            codes.push(ds.items[chunk[i]].id, ds.items[chunk[i]].labels, words);
        }
    }
    codes.validate();
    return codes;
}

}  // namespace vith
