#include "geogan/augment.hpp"

#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

namespace geogan::aug {

namespace {

Provenance real_record(const ImageSample& s) { return {s.id, "real", "", -1, {}, 0}; }

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::string to_string(ConditionPolicy p) { return p == ConditionPolicy::Preserve ? "preserve" : "balance"; }

ConditionPolicy parse_policy(const std::string& s) {
    if (s == "preserve") return ConditionPolicy::Preserve;
    if (s == "balance") return ConditionPolicy::Balance;
    throw gan::ConfigError("policy", "unknown condition policy '" + s + "' (preserve, balance)");
}

std::string to_string(BaseSplit b) { return b == BaseSplit::Train ? "train" : "val"; }

BaseSplit parse_base_split(const std::string& s) {
    if (s == "train") return BaseSplit::Train;
    if (s == "val" || s == "validation") return BaseSplit::Validation;
    throw gan::ConfigError("base_split", "unknown split '" + s + "' (train, val)");
}

void AugmentationPlan::validate() const {
    if (samples_per_base < 1) throw gan::ConfigError("samples_per_base", "must be >= 1");
}

nlohmann::json AugmentationPlan::to_json() const {
    return {{"samples_per_base", samples_per_base},
            {"policy", to_string(policy)},
            {"base_split", to_string(base_split)},
            {"seed", seed}};
}

std::uint64_t draw_seed(const AugmentationPlan& plan, const std::string& base_id, int draw) {
    return derive_seed(derive_seed(plan.seed, "augment/" + base_id), static_cast<std::uint64_t>(draw));
}

std::vector<SyntheticSample> generate_samples(const gan::GeoGan& models, const ImageSample& base,
                                              const AugmentationPlan& plan, std::span<const int> conditions) {
    plan.validate();
    if (static_cast<int>(conditions.size()) != plan.samples_per_base) {
        throw gan::GanError("generate_samples: " + std::to_string(conditions.size()) + " conditions for " +
                            std::to_string(plan.samples_per_base) + " draws");
    }
    models.generator.check_dims(base.height(), base.width());
    std::vector<SyntheticSample> out;
    for (int k = 0; k < plan.samples_per_base; ++k) {
        const int c = conditions[k];
        if (c < 0 || c > 1) throw gan::GanError("generate_samples: condition outside {0,1}");
        const std::uint64_t seed = draw_seed(plan, base.id, k);
        Rng rng(seed);
        auto syn = gan::synthesize(models, base, {c}, rng);
        if (c == 0) std::fill(syn.mask.data.begin(), syn.mask.data.end(), 0);
        ImageSample s{base.id + "_syn" + std::to_string(k), std::move(syn.image), std::move(syn.mask), c};
        out.push_back({std::move(s), {base.id + "_syn" + std::to_string(k), "synthetic", base.id, c, syn.affine, seed}});
    }
    return out;
}

std::vector<SyntheticSample> generate_samples(const gan::GeoGan& models, const ImageSample& base,
                                              const AugmentationPlan& plan) {
    plan.validate();
    std::vector<int> cond(plan.samples_per_base, base.class_label);
    if (plan.policy == ConditionPolicy::Balance) {
        Rng rng(derive_seed(plan.seed, "augment/condition/" + base.id));
        for (auto& c : cond) c = rng.bernoulli(0.5) ? 1 : 0;
    }
    return generate_samples(models, base, plan, cond);
}

AugmentedDataset augment_dataset(const gan::GeoGan& models, const SplitDataset& dataset,
                                 const AugmentationPlan& plan) {
    plan.validate();
    AugmentedDataset out{dataset, {}};
    for (const auto* fold : {&dataset.train, &dataset.val, &dataset.test})
        for (const auto& s : *fold) out.provenance.push_back(real_record(s));
    const auto& bases = plan.base_split == BaseSplit::Train ? dataset.train : dataset.val;
    if (bases.empty()) {
        spdlog::warn("augment: base split '{}' is empty; no synthetic samples written", to_string(plan.base_split));
        return out;
    }
    int counts[2] = {0, 0};
    for (const auto& s : dataset.train) ++counts[s.class_label ? 1 : 0];
    for (const auto& base : bases) {
        std::vector<int> cond(plan.samples_per_base, base.class_label);
        if (plan.policy == ConditionPolicy::Balance) {
            for (auto& c : cond) {
                c = counts[1] < counts[0] ? 1 : 0;
                ++counts[c];
            }
        }
        for (auto& syn : generate_samples(models, base, plan, cond)) {
            validate_sample(syn.sample, dataset.scheme);
            out.data.train.push_back(std::move(syn.sample));
            out.provenance.push_back(std::move(syn.provenance));
        }
    }
    return out;
}

AugmentedDataset build_augmented_dataset(const gan::GeoGan& models, const SplitDataset& dataset,
                                         const AugmentationPlan& plan, const std::filesystem::path& out) {
    auto aug = augment_dataset(models, dataset, plan);
    save_dataset(out, aug.data);
    write_provenance(out / "provenance.csv", aug.provenance);
    return aug;
}

void write_provenance(const std::filesystem::path& path, std::span<const Provenance> rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(17);
    out << "id,origin,base_id,condition,a0,a1,a2,a3,a4,a5,seed\n";
    for (const auto& r : rows) {
        out << r.id << ',' << r.origin << ',' << r.base_id << ',' << r.condition;
        for (double v : r.affine.a) out << ',' << v;
        out << ',' << r.seed << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

std::vector<Provenance> read_provenance(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<Provenance> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 11) throw DataError(path.string() + ": malformed provenance line '" + line + "'");
        Provenance p{f[0], f[1], f[2], std::stoi(f[3]), {}, std::stoull(f[10])};
        for (int i = 0; i < 6; ++i) p.affine.a[i] = std::stod(f[4 + i]);
        rows.push_back(std::move(p));
    }
    return rows;
}

}  // namespace geogan::aug
