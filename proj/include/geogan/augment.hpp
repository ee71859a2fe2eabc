#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "geogan/geogan.hpp"

/// Synthetic dataset production from a trained GeoGAN: base pairs are
/// warped and refined, then written next to the real data with provenance.
namespace geogan::aug {

enum class ConditionPolicy {
    Preserve,  // c_g equals the base class
    Balance,   // c_g chosen to even out the class counts
};
enum class BaseSplit { Train, Validation };

std::string to_string(ConditionPolicy p);
ConditionPolicy parse_policy(const std::string& s);
std::string to_string(BaseSplit b);
BaseSplit parse_base_split(const std::string& s);

struct AugmentationPlan {
    int samples_per_base = 1;
    ConditionPolicy policy = ConditionPolicy::Preserve;
    BaseSplit base_split = BaseSplit::Train;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
};

struct Provenance {
    std::string id;
    std::string origin;   // "real" or "synthetic"
    std::string base_id;  // empty for real samples
    int condition = -1;   // c_g, -1 for real samples
    stn::AffineTransform affine;
    std::uint64_t seed = 0;
};

struct SyntheticSample {
    ImageSample sample;
    Provenance provenance;
};

/// Per-draw stream seed; depends only on the plan seed, base id and draw.
std::uint64_t draw_seed(const AugmentationPlan& plan, const std::string& base_id, int draw);

/// samples_per_base draws from one base. Under Balance without explicit
/// conditions each draw picks c_g uniformly. A draw conditioned on class 0
/// keeps no pathology labels.
std::vector<SyntheticSample> generate_samples(const gan::GeoGan& models, const ImageSample& base,
                                              const AugmentationPlan& plan);
std::vector<SyntheticSample> generate_samples(const gan::GeoGan& models, const ImageSample& base,
                                              const AugmentationPlan& plan, std::span<const int> conditions);

struct AugmentedDataset {
    SplitDataset data;  // synthetic samples appended to train
    std::vector<Provenance> provenance;
};

/// Real folds unchanged plus synthetic samples from the plan's base split.
/// Balance assigns each draw to the class that is currently rarer in the
/// training fold. An empty base split yields no synthetic samples and a
/// warning.
AugmentedDataset augment_dataset(const gan::GeoGan& models, const SplitDataset& dataset,
                                 const AugmentationPlan& plan);

/// augment_dataset written in the dataset layout plus provenance.csv.
AugmentedDataset build_augmented_dataset(const gan::GeoGan& models, const SplitDataset& dataset,
                                         const AugmentationPlan& plan, const std::filesystem::path& out);

void write_provenance(const std::filesystem::path& path, std::span<const Provenance> rows);
std::vector<Provenance> read_provenance(const std::filesystem::path& path);

}  // namespace geogan::aug
