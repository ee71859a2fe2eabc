#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace geogan {

/// Row-major 2-D array.
template <typename T>
struct Grid2D {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid2D() = default;
    Grid2D(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return data.size(); }
    bool same_dims(int h, int w) const { return height == h && width == w; }
    template <typename U>
    bool same_dims(const Grid2D<U>& o) const { return height == o.height && width == o.width; }
    bool operator==(const Grid2D&) const = default;
};

using Image = Grid2D<double>;
using LabelMap = Grid2D<int>;

std::string dims_str(int h, int w);

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mapping between label names and the integers stored in masks. Index 0 is
/// background.
class LabelScheme {
public:
    LabelScheme() = default;
    explicit LabelScheme(std::vector<std::string> names);
    LabelScheme(std::vector<std::string> names, std::map<std::string, int> encoding);

    /// background, ground-glass opacity, consolidation, pleural effusion
    static LabelScheme covid_default();

    int n() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    const std::map<std::string, int>& encoding() const { return encoding_; }
    int encode(const std::string& name) const;
    const std::string& name(int label) const { return names_.at(label); }
    bool registered(int label) const { return label >= 0 && label < n(); }
    /// Non-background labels, 1..n-1.
    std::vector<int> pathology_labels() const;
    std::uint64_t hash() const;

    nlohmann::json to_json() const;
    static LabelScheme from_json(const nlohmann::json& j);
    bool operator==(const LabelScheme&) const = default;

private:
    std::vector<std::string> names_;
    std::map<std::string, int> encoding_;
};

struct ImageSample {
    std::string id;
    Image image;      // intensities in [0,1]
    LabelMap mask;    // label per pixel
    int class_label = 0;  // 1 = infected, 0 = not infected

    int height() const { return image.height; }
    int width() const { return image.width; }
    bool operator==(const ImageSample&) const = default;
};

/// Throws DataError if dims disagree, labels are unregistered, or an NI
/// sample carries pathology labels.
void validate_sample(const ImageSample& s, const LabelScheme& scheme);

/// Labels present in a mask, sorted.
std::vector<int> labels_present(const LabelMap& mask);

struct GridSpec {
    int n = 4;

    /// Throws DataError unless n >= 1 and n divides both dims.
    void validate(int height, int width) const;
    int cell_height(int height) const { return height / n; }
    int cell_width(int width) const { return width / n; }
};

struct InstanceBag {
    std::vector<Image> instances;  // row-major grid order
    int bag_label = 0;
    std::string source_id;
    int grid_n = 1;
};

/// N*N non-overlapping crops in row-major order; bag label = class label.
InstanceBag split_into_instances(const ImageSample& sample, const GridSpec& grid);
/// Inverse of split_into_instances.
Image reassemble_instances(const InstanceBag& bag);

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
    std::uint64_t seed = 0;

    /// Throws DataError unless the lists are pairwise disjoint and cover ids.
    void validate(const std::vector<std::string>& ids) const;
};

DatasetSplit make_split(const std::vector<std::string>& ids, int n_train, int n_val, std::uint64_t seed);

struct ToyOptions {
    int count = 10;
    int height = 64;
    int width = 64;
    double infected_fraction = 0.5;
    std::uint64_t seed = 0;
    /// Probability that each pathology label appears in an infected sample
    /// (at least one always does).
    double label_presence = 0.7;
    std::string id_prefix = "toy";
};

/// Procedural chest-CT-like slices with exact masks. Pure function of options.
std::vector<ImageSample> generate_toy_dataset(const ToyOptions& opts, const LabelScheme& scheme);

/// Dataset split into the three folds used on disk.
struct SplitDataset {
    LabelScheme scheme;
    std::vector<ImageSample> train;
    std::vector<ImageSample> val;
    std::vector<ImageSample> test;

    std::size_t size() const { return train.size() + val.size() + test.size(); }
    DatasetSplit split() const;
};

SplitDataset assign_split(std::vector<ImageSample> samples, const LabelScheme& scheme, const DatasetSplit& split);

/// root/{train,val,test}/{images,masks}/<id>.png, root/scheme.json, root/labels.csv
void save_dataset(const std::filesystem::path& root, const SplitDataset& ds);
/// Empty directory yields an empty dataset with the default scheme.
SplitDataset load_dataset(const std::filesystem::path& root);

// PNG codecs: 8-bit grayscale images (value/255), 8-bit paletted masks.
void write_image_png(const std::filesystem::path& path, const Image& img);
Image read_image_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const LabelMap& mask);
LabelMap read_mask_png(const std::filesystem::path& path);

}  // namespace geogan
