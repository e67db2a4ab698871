#include "latentuq/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include "latentuq/rng.hpp"

namespace luq::dataio {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803u;
constexpr std::uint32_t kLabelMagic = 0x00000801u;

std::uint32_t read_be_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw TruncatedFile(std::string("idx: truncated ") + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TruncatedFile("cannot open " + path.string());
    return in;
}

} // namespace

Matrix load_idx_images(std::istream& in) {
    const std::uint32_t magic = read_be_u32(in, "header");
    if (magic != kImageMagic)
        throw BadMagic("idx images: magic " + std::to_string(magic) + ", expected " +
                       std::to_string(kImageMagic));
    const std::uint32_t n = read_be_u32(in, "count");
    const std::uint32_t rows = read_be_u32(in, "rows");
    const std::uint32_t cols = read_be_u32(in, "cols");
    const std::size_t dim = std::size_t(rows) * cols;

    Matrix features(n, dim);
    std::vector<unsigned char> buf(dim);
    for (std::uint32_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
        if (static_cast<std::size_t>(in.gcount()) != dim)
            throw TruncatedFile("idx images: truncated at sample " + std::to_string(i));
        double* row = &features(i, 0);
        for (std::size_t j = 0; j < dim; ++j) row[j] = buf[j] / 255.0;
    }
    return features;
}

Matrix load_idx_images(const std::filesystem::path& path) {
    auto in = open_binary(path);
    return load_idx_images(in);
}

std::vector<int> load_idx_labels(std::istream& in) {
    const std::uint32_t magic = read_be_u32(in, "header");
    if (magic != kLabelMagic)
        throw BadMagic("idx labels: magic " + std::to_string(magic) + ", expected " +
                       std::to_string(kLabelMagic));
    const std::uint32_t n = read_be_u32(in, "count");
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw TruncatedFile("idx labels: truncated payload");
    return {buf.begin(), buf.end()};
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
    auto in = open_binary(path);
    return load_idx_labels(in);
}

void save_idx_images(const Matrix& features, std::uint32_t rows, std::uint32_t cols,
                     std::ostream& out) {
    if (std::size_t(rows) * cols != features.cols())
        throw DimensionMismatch("save_idx_images: rows*cols != feature width");
    write_be_u32(out, kImageMagic);
    write_be_u32(out, static_cast<std::uint32_t>(features.rows()));
    write_be_u32(out, rows);
    write_be_u32(out, cols);
    std::vector<unsigned char> buf(features.cols());
    for (std::size_t i = 0; i < features.rows(); ++i) {
        for (std::size_t j = 0; j < features.cols(); ++j)
            buf[j] = static_cast<unsigned char>(std::lround(features(i, j) * 255.0));
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
}

void save_idx_labels(const std::vector<int>& labels, std::ostream& out) {
    write_be_u32(out, kLabelMagic);
    write_be_u32(out, static_cast<std::uint32_t>(labels.size()));
    for (int v : labels) {
        const auto b = static_cast<unsigned char>(v);
        out.write(reinterpret_cast<const char*>(&b), 1);
    }
}

Dataset load_idx_dataset(const std::filesystem::path& images,
                         const std::filesystem::path& labels) {
    Dataset ds;
    ds.features = load_idx_images(images);
    ds.labels = load_idx_labels(labels);
    if (ds.features.rows() != ds.labels.size())
        throw DimensionMismatch("idx dataset: " + std::to_string(ds.features.rows()) +
                                " images vs " + std::to_string(ds.labels.size()) + " labels");
    int max_label = -1;
    for (int l : ds.labels) max_label = std::max(max_label, l);
    ds.num_classes = max_label + 1;
    return ds;
}

namespace {

Dataset select_rows(const Dataset& src, const std::vector<std::size_t>& rows,
                    const std::map<int, int>* remap, int num_classes) {
    Dataset out;
    out.features = Matrix(rows.size(), src.features.cols());
    out.labels.reserve(rows.size());
    out.num_classes = num_classes;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = src.features.row(rows[i]);
        std::copy(r.begin(), r.end(), out.features.row(i).begin());
        const int orig = src.labels[rows[i]];
        out.labels.push_back(remap ? remap->at(orig) : orig);
    }
    return out;
}

} // namespace

OodSplit make_ood_split(const Dataset& train, const Dataset& test, int held_out_label) {
    const auto occurs = [&](const Dataset& d) {
        return std::find(d.labels.begin(), d.labels.end(), held_out_label) != d.labels.end();
    };
    if (!occurs(train) && !occurs(test))
        throw LabelAbsent("make_ood_split: label " + std::to_string(held_out_label) +
                          " occurs in neither dataset");

    // contiguous remap of the remaining labels, ascending
    std::set<int> remaining;
    for (int l : train.labels)
        if (l != held_out_label) remaining.insert(l);
    for (int l : test.labels)
        if (l != held_out_label) remaining.insert(l);
    OodSplit split;
    split.held_out_label = held_out_label;
    int next = 0;
    for (int l : remaining) split.label_map[l] = next++;

    std::vector<std::size_t> train_rows;
    for (std::size_t i = 0; i < train.labels.size(); ++i)
        if (train.labels[i] != held_out_label) train_rows.push_back(i);
    std::vector<std::size_t> in_rows;
    std::vector<std::size_t> ood_rows;
    for (std::size_t i = 0; i < test.labels.size(); ++i)
        (test.labels[i] == held_out_label ? ood_rows : in_rows).push_back(i);

    const int k_remaining = static_cast<int>(remaining.size());
    split.train = select_rows(train, train_rows, &split.label_map, k_remaining);
    split.test_in = select_rows(test, in_rows, &split.label_map, k_remaining);
    split.test_ood = select_rows(test, ood_rows, nullptr,
                                 std::max(train.num_classes, test.num_classes));
    return split;
}

Dataset synth_blobs(int num_classes, int dim, int per_class, double separation,
                    std::uint64_t seed) {
    if (num_classes < 2) throw BadParameter("synth_blobs: num_classes must be >= 2");
    if (dim < 1) throw BadParameter("synth_blobs: dim must be >= 1");
    if (per_class < 1) throw BadParameter("synth_blobs: per_class must be >= 1");
    if (separation < 0.0) throw BadParameter("synth_blobs: separation must be >= 0");

    // center k sits on axis (k mod dim) at radius separation*(1 + k/dim),
    // which keeps all pairs at least `separation` apart
    const std::size_t n = std::size_t(num_classes) * per_class;
    Dataset ds;
    ds.features = Matrix(n, dim);
    ds.labels.reserve(n);
    ds.num_classes = num_classes;

    auto gen = rng::engine(seed);
    std::size_t row = 0;
    for (int k = 0; k < num_classes; ++k) {
        const int axis = k % dim;
        const double radius = separation * (1.0 + k / dim);
        for (int s = 0; s < per_class; ++s, ++row) {
            double* out = &ds.features(row, 0);
            for (int j = 0; j < dim; ++j)
                out[j] = (j == axis ? radius : 0.0) + rng::normal(gen);
            ds.labels.push_back(k);
        }
    }

    // per-dimension min-max rescale into [0,1]
    for (int j = 0; j < dim; ++j) {
        double lo = ds.features(0, j);
        double hi = lo;
        for (std::size_t i = 1; i < n; ++i) {
            lo = std::min(lo, ds.features(i, j));
            hi = std::max(hi, ds.features(i, j));
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < n; ++i) {
            double& v = ds.features(i, j);
            v = range > 1e-12 ? (v - lo) / range : 0.5;
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, int test_per_class) {
    if (test_per_class < 0) throw BadParameter("split_train_test: negative test_per_class");
    std::vector<int> seen(data.num_classes, 0);
    std::vector<int> total(data.num_classes, 0);
    for (int l : data.labels) total[l]++;
    for (int k = 0; k < data.num_classes; ++k)
        if (total[k] <= test_per_class)
            throw BadParameter("split_train_test: class " + std::to_string(k) +
                               " has only " + std::to_string(total[k]) + " samples");

    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
        const int k = data.labels[i];
        if (++seen[k] <= total[k] - test_per_class)
            train_rows.push_back(i);
        else
            test_rows.push_back(i);
    }
    return {select_rows(data, train_rows, nullptr, data.num_classes),
            select_rows(data, test_rows, nullptr, data.num_classes)};
}

} // namespace luq::dataio
