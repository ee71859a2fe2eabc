#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "geogan/toydata.hpp"

namespace geogan {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Distinct colours for mask labels; index i is label i.
constexpr std::uint8_t kPalette[][3] = {
    {0, 0, 0},     {102, 204, 255}, {0, 170, 0},     {255, 221, 0},   {255, 0, 0},     {170, 0, 255},
    {255, 136, 0}, {0, 0, 255},     {128, 128, 128}, {255, 255, 255},
};

void write_png(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& pixels, bool paletted) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng init failed for " + path.string());
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng write error for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 paletted ? PNG_COLOR_TYPE_PALETTE : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> palette(256);
    if (paletted) {
        for (int i = 0; i < 256; ++i) {
            const auto& c = kPalette[i % (sizeof kPalette / sizeof kPalette[0])];
            palette[i] = {c[0], c[1], c[2]};
        }
        png_set_PLTE(png, info, palette.data(), 256);
    }
    png_write_info(png, info);
    for (int r = 0; r < height; ++r) {
        png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(r) * width));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png(const fs::path& path, int& height, int& width) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng init failed for " + path.string());
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng read error for " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (depth < 8) png_set_packing(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_channels(png, info) != 1) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("expected a single-channel PNG: " + path.string());
    }
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(height) * width);
    for (int r = 0; r < height; ++r) png_read_row(png, pixels.data() + static_cast<std::size_t>(r) * width, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

const char* kFolds[] = {"train", "val", "test"};

}  // namespace

void write_image_png(const fs::path& path, const Image& img) {
    std::vector<std::uint8_t> px(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    }
    write_png(path, img.height, img.width, px, false);
}

Image read_image_png(const fs::path& path) {
    int h = 0, w = 0;
    const auto px = read_png(path, h, w);
    Image img(h, w);
    for (std::size_t i = 0; i < px.size(); ++i) img.data[i] = px[i] / 255.0;
    return img;
}

void write_mask_png(const fs::path& path, const LabelMap& mask) {
    std::vector<std::uint8_t> px(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask.data[i] < 0 || mask.data[i] > 255) throw DataError("mask value out of 8-bit range: " + path.string());
        px[i] = static_cast<std::uint8_t>(mask.data[i]);
    }
    write_png(path, mask.height, mask.width, px, true);
}

LabelMap read_mask_png(const fs::path& path) {
    int h = 0, w = 0;
    const auto px = read_png(path, h, w);
    LabelMap m(h, w);
    for (std::size_t i = 0; i < px.size(); ++i) m.data[i] = px[i];
    return m;
}

void save_dataset(const fs::path& root, const SplitDataset& ds) {
    fs::create_directories(root);
    {
        std::ofstream out(root / "scheme.json");
        out << ds.scheme.to_json().dump(2) << "\n";
    }
    std::ofstream labels(root / "labels.csv");
    if (!labels) throw DataError("cannot write " + (root / "labels.csv").string());
    labels << "id,class_label\n";
    const std::vector<const std::vector<ImageSample>*> folds{&ds.train, &ds.val, &ds.test};
    for (std::size_t f = 0; f < folds.size(); ++f) {
        fs::create_directories(root / kFolds[f] / "images");
        fs::create_directories(root / kFolds[f] / "masks");
        for (const auto& s : *folds[f]) {
            validate_sample(s, ds.scheme);
            write_image_png(root / kFolds[f] / "images" / (s.id + ".png"), s.image);
            write_mask_png(root / kFolds[f] / "masks" / (s.id + ".png"), s.mask);
            labels << s.id << "," << s.class_label << "\n";
        }
    }
}

SplitDataset load_dataset(const fs::path& root) {
    SplitDataset ds;
    ds.scheme = LabelScheme::covid_default();
    if (!fs::exists(root)) throw DataError("dataset root does not exist: " + root.string());
    if (fs::exists(root / "scheme.json")) {
        std::ifstream in(root / "scheme.json");
        ds.scheme = LabelScheme::from_json(nlohmann::json::parse(in));
    }
    std::map<std::string, int> class_of;
    if (fs::exists(root / "labels.csv")) {
        std::ifstream in(root / "labels.csv");
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) throw DataError("labels.csv: malformed line '" + line + "'");
            class_of[line.substr(0, comma)] = std::stoi(line.substr(comma + 1));
        }
    }
    std::vector<std::vector<ImageSample>*> folds{&ds.train, &ds.val, &ds.test};
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const fs::path img_dir = root / kFolds[f] / "images";
        if (!fs::exists(img_dir)) continue;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(img_dir)) {
            if (e.path().extension() == ".png") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& p : files) {
            ImageSample s;
            s.id = p.stem().string();
            const fs::path mask_path = root / kFolds[f] / "masks" / p.filename();
            if (!fs::exists(mask_path)) throw DataError("sample " + s.id + ": missing mask file " + mask_path.string());
            s.image = read_image_png(p);
            s.mask = read_mask_png(mask_path);
            auto it = class_of.find(s.id);
            if (it == class_of.end()) throw DataError("sample " + s.id + ": no entry in labels.csv");
            s.class_label = it->second;
            validate_sample(s, ds.scheme);
            folds[f]->push_back(std::move(s));
        }
    }
    return ds;
}

}  // namespace geogan
