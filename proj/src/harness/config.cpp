#include "lpq/harness/config.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace lpq::harness {

using nlohmann::json;

void RunConfig::validate() const {
    model.validate();
    require(optimizer.lr > 0, "optimizer.lr must be positive");
    require(optimizer.steps >= 0, "optimizer.steps must be non-negative");
    require(optimizer.weight_decay >= 0, "optimizer.weight_decay must be non-negative");
    require(optimizer.beta1 >= 0 && optimizer.beta1 < 1 && optimizer.beta2 >= 0 && optimizer.beta2 < 1,
            "optimizer betas must be in [0, 1)");
    require(optimizer.eps > 0, "optimizer.eps must be positive");
    require(optimizer.grad_clip >= 0, "optimizer.grad_clip must be non-negative");
    require(optimizer.batch_size >= 1, "optimizer.batch_size must be positive");
    require(dataset.clips >= 1, "dataset.clips must be positive");
    require(dataset.max_objects >= 1 && dataset.max_objects <= 8, "dataset.max_objects must be in [1, 8]");
}

json to_json(const RunConfig& c) {
    const auto& m = c.model;
    return {
        {"video", {{"channels", m.video.channels}, {"frames", m.video.frames}, {"height", m.video.height}, {"width", m.video.width}}},
        {"levels", m.encoder.levels},
        {"bits", m.codebook.bits},
        {"temperature", m.codebook.temperature},
        {"ste_bound", m.codebook.ste_bound},
        {"loss_weights", {{"recon", m.weights.recon}, {"codebook", m.weights.codebook}, {"ar", m.weights.ar}, {"drift", m.weights.drift}}},
        {"adapter", {{"rank", m.encoder.adapter_rank}, {"alpha", m.encoder.adapter_alpha}}},
        {"encoder",
         {{"channels", m.encoder.channels},
          {"temporal_halving_stages", m.encoder.temporal_halving_stages},
          {"decoder_channels", m.encoder.decoder_channels},
          {"decoder_all_levels", m.encoder.decoder_all_levels}}},
        {"quantizer",
         {{"variant", variant_name(m.variant)},
          {"text_dim", m.quantizer.text_dim},
          {"attn_dim", m.quantizer.attn_dim},
          {"heads", m.quantizer.heads},
          {"prior_scale", m.quantizer.prior_scale},
          {"lateral_gain", m.quantizer.lateral_gain},
          {"vq_entries", m.vq_entries},
          {"vq_groups", m.vq_groups},
          {"rvq_depth", m.rvq_depth},
          {"vq_beta", m.vq_beta}}},
        {"ar",
         {{"width", m.ar.width},
          {"layers", m.ar.layers},
          {"heads", m.ar.heads},
          {"max_len", m.ar.max_len},
          {"mlp_ratio", m.ar.mlp_ratio},
          {"through_quantizer", m.ar.through_quantizer}}},
        {"codebook_loss",
         {{"text_code_samples", m.codebook_loss.text_code_samples},
          {"code_sharpness", m.codebook_loss.code_sharpness},
          {"batch_diversity", m.codebook_loss.batch_diversity}}},
        {"mask_ratio", m.mask_ratio},
        {"optimizer",
         {{"lr", c.optimizer.lr},
          {"steps", c.optimizer.steps},
          {"weight_decay", c.optimizer.weight_decay},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"grad_clip", c.optimizer.grad_clip},
          {"batch_size", c.optimizer.batch_size}}},
        {"dataset",
         {{"clips", c.dataset.clips},
          {"max_objects", c.dataset.max_objects},
          {"seed", c.dataset.seed},
          {"repeat_first", c.dataset.repeat_first}}},
        {"seeds", {{"model", m.seed}, {"reference", m.reference_seed}, {"train", c.train_seed}}},
        {"curriculum_stages", c.curriculum_stages},
    };
}

namespace {

void check_known(const json& user, const json& known, const std::string& path) {
    require(user.is_object(), "config" + (path.empty() ? "" : " key '" + path + "'") + " must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        require(known.contains(it.key()), "unknown config key '" + key + "'");
        if (known[it.key()].is_object()) check_known(it.value(), known[it.key()], key);
    }
}

template <typename V>
void get(const json& j, const char* key, V& out) {
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception& e) {
        fail(std::string("config key '") + key + "': " + e.what());
    }
}

}  // namespace

RunConfig from_json(const json& user) {
    RunConfig def;
    json j = to_json(def);
    check_known(user, j, "");
    j.merge_patch(user);
    RunConfig c;
    auto& m = c.model;
    const auto& v = j["video"];
    get(v, "channels", m.video.channels);
    get(v, "frames", m.video.frames);
    get(v, "height", m.video.height);
    get(v, "width", m.video.width);
    get(j, "levels", m.encoder.levels);
    get(j, "bits", m.codebook.bits);
    get(j, "temperature", m.codebook.temperature);
    get(j, "ste_bound", m.codebook.ste_bound);
    const auto& w = j["loss_weights"];
    get(w, "recon", m.weights.recon);
    get(w, "codebook", m.weights.codebook);
    get(w, "ar", m.weights.ar);
    get(w, "drift", m.weights.drift);
    get(j["adapter"], "rank", m.encoder.adapter_rank);
    get(j["adapter"], "alpha", m.encoder.adapter_alpha);
    const auto& e = j["encoder"];
    get(e, "channels", m.encoder.channels);
    get(e, "temporal_halving_stages", m.encoder.temporal_halving_stages);
    get(e, "decoder_channels", m.encoder.decoder_channels);
    get(e, "decoder_all_levels", m.encoder.decoder_all_levels);
    m.encoder.in_channels = static_cast<int>(m.video.channels);
    const auto& q = j["quantizer"];
    std::string variant;
    get(q, "variant", variant);
    m.variant = variant_from_name(variant);
    get(q, "text_dim", m.quantizer.text_dim);
    get(q, "attn_dim", m.quantizer.attn_dim);
    get(q, "heads", m.quantizer.heads);
    get(q, "prior_scale", m.quantizer.prior_scale);
    get(q, "lateral_gain", m.quantizer.lateral_gain);
    get(q, "vq_entries", m.vq_entries);
    get(q, "vq_groups", m.vq_groups);
    get(q, "rvq_depth", m.rvq_depth);
    get(q, "vq_beta", m.vq_beta);
    const auto& a = j["ar"];
    get(a, "width", m.ar.width);
    get(a, "layers", m.ar.layers);
    get(a, "heads", m.ar.heads);
    get(a, "max_len", m.ar.max_len);
    get(a, "mlp_ratio", m.ar.mlp_ratio);
    get(a, "through_quantizer", m.ar.through_quantizer);
    const auto& cl = j["codebook_loss"];
    get(cl, "text_code_samples", m.codebook_loss.text_code_samples);
    get(cl, "code_sharpness", m.codebook_loss.code_sharpness);
    get(cl, "batch_diversity", m.codebook_loss.batch_diversity);
    get(j, "mask_ratio", m.mask_ratio);
    const auto& o = j["optimizer"];
    get(o, "lr", c.optimizer.lr);
    get(o, "steps", c.optimizer.steps);
    get(o, "weight_decay", c.optimizer.weight_decay);
    get(o, "beta1", c.optimizer.beta1);
    get(o, "beta2", c.optimizer.beta2);
    get(o, "eps", c.optimizer.eps);
    get(o, "grad_clip", c.optimizer.grad_clip);
    get(o, "batch_size", c.optimizer.batch_size);
    const auto& d = j["dataset"];
    get(d, "clips", c.dataset.clips);
    get(d, "max_objects", c.dataset.max_objects);
    get(d, "seed", c.dataset.seed);
    get(d, "repeat_first", c.dataset.repeat_first);
    get(j["seeds"], "model", m.seed);
    get(j["seeds"], "reference", m.reference_seed);
    get(j["seeds"], "train", c.train_seed);
    get(j, "curriculum_stages", c.curriculum_stages);
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        fail("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

std::string content_hash(const std::string& bytes) {
    // git blob object id: sha1("blob <size>\0" + bytes)
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    const std::string object = header + bytes;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    require(EVP_Digest(object.data(), object.size(), md, &len, EVP_sha1(), nullptr) == 1, "sha1 digest failed");
    std::ostringstream s;
    s << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) s << std::setw(2) << static_cast<int>(md[i]);
    return s.str();
}

}  // namespace lpq::harness
