#include "tempo/raster.hpp"

#include "tempo/binary_io.hpp"
#include "tempo/error.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

namespace tempo {

namespace {

constexpr std::string_view raster_magic = "TEMB";
constexpr std::uint16_t raster_version = 1;

struct Header {
    TileGrid grid;
    std::uint16_t channels = 0;
    RasterDtype dtype = RasterDtype::f32;
};

void write_header(binary::Writer& w, const TileGrid& g, std::uint16_t channels, RasterDtype dtype) {
    w.bytes(raster_magic);
    w.put(raster_version);
    w.put(static_cast<std::uint8_t>(g.origin.zoom));
    w.put(g.origin.x);
    w.put(g.origin.y);
    w.put(g.width);
    w.put(g.height);
    w.put(channels);
    w.put(static_cast<std::uint8_t>(dtype));
}

Header read_header(binary::Reader& rd) {
    rd.expect(raster_magic, "raster");
    const auto version = rd.get<std::uint16_t>();
    if (version != raster_version) {
        throw FormatError("unsupported raster version " + std::to_string(version), 4);
    }
    Header h;
    h.grid.origin.zoom = rd.get<std::uint8_t>();
    h.grid.origin.x = rd.get<std::uint32_t>();
    h.grid.origin.y = rd.get<std::uint32_t>();
    h.grid.width = rd.get<std::uint32_t>();
    h.grid.height = rd.get<std::uint32_t>();
    try {
        validate(h.grid);
    } catch (const InputError& e) {
        throw FormatError(std::string("invalid grid: ") + e.what(), 6);
    }
    h.channels = rd.get<std::uint16_t>();
    if (h.channels == 0) {
        throw FormatError("zero channels", 23);
    }
    const auto dtype = rd.get<std::uint8_t>();
    if (dtype != static_cast<std::uint8_t>(RasterDtype::u8) && dtype != static_cast<std::uint8_t>(RasterDtype::f32)) {
        throw FormatError("unknown dtype " + std::to_string(dtype), 25);
    }
    h.dtype = static_cast<RasterDtype>(dtype);
    return h;
}

std::filesystem::path sidecar(const std::filesystem::path& p) {
    return std::filesystem::path(p.string() + ".json");
}

} // namespace

FloatRaster::FloatRaster(const TileGrid& g, std::uint16_t c)
    : grid(g), channels(c), data(g.cell_count() * c, 0.0f) {}

void validate(const LabelRaster& l) {
    validate(l.grid);
    if (l.labels.size() != l.grid.cell_count()) {
        throw InputError("label raster size does not match its grid");
    }
    if (l.classes.size() >= LabelRaster::ignore) {
        throw InputError("too many classes");
    }
    for (auto v : l.labels) {
        if (v != LabelRaster::ignore && v >= l.classes.size()) {
            throw InputError("label " + std::to_string(v) + " is not in the class table");
        }
    }
}

std::vector<std::size_t> class_counts(const LabelRaster& l) {
    std::vector<std::size_t> counts(l.classes.size(), 0);
    for (auto v : l.labels) {
        if (v != LabelRaster::ignore && v < counts.size()) {
            ++counts[v];
        }
    }
    return counts;
}

EmbeddingRaster build_raster(const std::map<TileId, TemporalEmbedding>& embeddings, const TileGrid& grid,
                             Eigen::Index dim) {
    validate(grid);
    if (dim < 1 || dim >= 0xffff) {
        throw InputError("embedding dimension out of range");
    }
    EmbeddingRaster r(grid, static_cast<std::uint16_t>(dim + 1));
    for (const auto& [tile, e] : embeddings) {
        const auto cell = grid_index(grid, tile);
        if (!cell) {
            throw DataError("embedding for tile (" + std::to_string(tile.x) + ", " + std::to_string(tile.y) +
                            ") lies outside the grid");
        }
        if (e.values.size() != dim) {
            throw InputError("embedding dimension mismatch");
        }
        auto px = r.pixel(std::size_t{cell->row} * grid.width + cell->col);
        for (Eigen::Index k = 0; k < dim; ++k) {
            px[static_cast<std::size_t>(k)] = static_cast<float>(e.values(k));
        }
        px.back() = 1.0f;
    }
    return r;
}

std::string serialize_raster(const FloatRaster& r) {
    validate(r.grid);
    if (r.data.size() != r.grid.cell_count() * r.channels) {
        throw InputError("raster data size does not match grid x channels");
    }
    binary::Writer w;
    w.reserve(32 + r.data.size() * 4);
    write_header(w, r.grid, r.channels, RasterDtype::f32);
    for (float v : r.data) {
        w.put(v);
    }
    return w.release();
}

FloatRaster deserialize_raster(std::string_view bytes) {
    binary::Reader rd(bytes);
    const auto h = read_header(rd);
    if (h.dtype != RasterDtype::f32) {
        throw FormatError("expected a float32 raster", 25);
    }
    FloatRaster r(h.grid, h.channels);
    rd.need(r.data.size() * 4);
    for (auto& v : r.data) {
        v = rd.get<float>();
    }
    if (rd.remaining() != 0) {
        throw FormatError("trailing bytes after raster data", rd.offset());
    }
    return r;
}

void save_raster(const FloatRaster& r, const std::filesystem::path& path) {
    binary::write_file(path, serialize_raster(r));
}

FloatRaster load_raster(const std::filesystem::path& path) {
    return deserialize_raster(binary::read_file(path));
}

std::string serialize_label_raster(const LabelRaster& l) {
    validate(l);
    binary::Writer w;
    write_header(w, l.grid, 1, RasterDtype::u8);
    for (auto v : l.labels) {
        w.put(v);
    }
    return w.release();
}

LabelRaster deserialize_label_raster(std::string_view bytes, std::vector<std::string> classes) {
    binary::Reader rd(bytes);
    const auto h = read_header(rd);
    if (h.dtype != RasterDtype::u8 || h.channels != 1) {
        throw FormatError("expected a single-channel u8 label raster", 23);
    }
    LabelRaster l{h.grid, std::vector<std::uint8_t>(h.grid.cell_count()), std::move(classes)};
    rd.need(l.labels.size());
    for (auto& v : l.labels) {
        v = rd.get<std::uint8_t>();
    }
    if (rd.remaining() != 0) {
        throw FormatError("trailing bytes after label data", rd.offset());
    }
    try {
        validate(l);
    } catch (const InputError& e) {
        throw DataError(e.what());
    }
    return l;
}

void save_label_raster(const LabelRaster& l, const std::filesystem::path& path) {
    binary::write_file(path, serialize_label_raster(l));
    nlohmann::json j;
    j["ignore"] = LabelRaster::ignore;
    j["classes"] = nlohmann::json::array();
    for (std::size_t i = 0; i < l.classes.size(); ++i) {
        j["classes"].push_back({{"id", i}, {"name", l.classes[i]}});
    }
    binary::write_file(sidecar(path), j.dump(2) + "\n");
}

LabelRaster load_label_raster(const std::filesystem::path& path) {
    std::vector<std::string> classes;
    try {
        const auto j = nlohmann::json::parse(binary::read_file(sidecar(path)));
        for (const auto& c : j.at("classes")) {
            const auto id = c.at("id").get<std::size_t>();
            if (id != classes.size()) {
                throw DataError("class table ids must be consecutive from 0");
            }
            classes.push_back(c.at("name").get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad class table for " + path.string() + ": " + e.what());
    }
    return deserialize_label_raster(binary::read_file(path), std::move(classes));
}

void write_embedding_csv(std::ostream& out, const EmbeddingRaster& r) {
    out << "tile_x,tile_y";
    for (int k = 0; k + 1 < r.channels; ++k) {
        out << ",e" << k;
    }
    out << '\n';
    char buf[32];
    for (std::uint32_t row = 0; row < r.grid.height; ++row) {
        for (std::uint32_t col = 0; col < r.grid.width; ++col) {
            const auto i = std::size_t{row} * r.grid.width + col;
            if (!masked_in(r, i)) {
                continue;
            }
            const auto t = r.grid.tile_at(row, col);
            out << t.x << ',' << t.y;
            const auto px = r.pixel(i);
            for (int k = 0; k + 1 < r.channels; ++k) {
                std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(px[static_cast<std::size_t>(k)]));
                out << buf;
            }
            out << '\n';
        }
    }
}

Eigen::Vector3d Projection3::project(std::span<const float> features) const {
    Eigen::VectorXd v(mean.size());
    for (Eigen::Index k = 0; k < mean.size(); ++k) {
        v(k) = static_cast<double>(features[static_cast<std::size_t>(k)]) - mean(k);
    }
    return components * v;
}

Projection3 fit_projection(std::span<const EmbeddingRaster> rasters) {
    if (rasters.empty()) {
        throw InputError("no rasters to fit a projection on");
    }
    const int dim = rasters.front().channels - 1;
    if (dim < 1) {
        throw InputError("raster has no embedding channels");
    }
    std::vector<std::vector<float>> pixels;
    for (const auto& r : rasters) {
        if (r.channels - 1 != dim) {
            throw InputError("rasters disagree on channel count");
        }
        for (std::size_t i = 0; i < r.pixel_count(); ++i) {
            if (masked_in(r, i)) {
                const auto px = r.pixel(i);
                pixels.emplace_back(px.begin(), px.end() - 1);
            }
        }
    }
    if (pixels.size() < 4) {
        throw InputError("projection needs at least 4 valid pixels, have " + std::to_string(pixels.size()));
    }
    // Canonical order makes the fit independent of pixel order down to the last bit.
    std::sort(pixels.begin(), pixels.end());

    const auto n = static_cast<double>(pixels.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto& p : pixels) {
        for (int k = 0; k < dim; ++k) {
            mean(k) += p[static_cast<std::size_t>(k)];
        }
    }
    mean /= n;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd d(dim);
    for (const auto& p : pixels) {
        for (int k = 0; k < dim; ++k) {
            d(k) = p[static_cast<std::size_t>(k)] - mean(k);
        }
        cov.selfadjointView<Eigen::Lower>().rankUpdate(d);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= n;

    Projection3 proj;
    proj.mean = mean;
    proj.components = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, dim);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::VectorXd values = eig.eigenvalues();
    const double total = std::max(values.sum(), 0.0);
    const double tol = 1e-12 * std::max(values.maxCoeff(), 1e-300);
    int rank = 0;
    for (int k = 0; k < dim; ++k) {
        rank += values(k) > tol ? 1 : 0;
    }

    // Eigenvalues ascend; take the top three. Below dim 3 the remaining rows are completed from unit vectors.
    int filled = 0;
    for (int k = dim - 1; k >= 0 && filled < 3; --k, ++filled) {
        proj.components.row(filled) = eig.eigenvectors().col(k).transpose();
        proj.explained[static_cast<std::size_t>(filled)] = total > 0 ? std::max(values(k), 0.0) / total : 0.0;
    }
    if (filled < 3 || rank < 3) {
        proj.rank_deficient = true;
        spdlog::warn("embedding covariance has rank {} < 3; projection completed arbitrarily", rank);
    }
    for (int row = 0; row < 3; ++row) {
        auto c = proj.components.row(row);
        if (c.squaredNorm() > 0.5) {
            continue;
        }
        // Gram-Schmidt completion for dim < 3; the extra rows cannot be orthonormal
        // in fewer than three dimensions, so they stay zero there.
        for (int axis = 0; axis < dim; ++axis) {
            Eigen::RowVectorXd v = Eigen::RowVectorXd::Unit(dim, axis);
            for (int prev = 0; prev < row; ++prev) {
                v -= v.dot(proj.components.row(prev)) * proj.components.row(prev);
            }
            if (v.norm() > 1e-6) {
                c = v.normalized();
                break;
            }
        }
    }
    for (int row = 0; row < 3; ++row) {
        auto c = proj.components.row(row);
        Eigen::Index argmax = 0;
        c.cwiseAbs().maxCoeff(&argmax);
        if (c(argmax) < 0) {
            c = -c;
        }
    }

    proj.lo = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
               std::numeric_limits<double>::infinity()};
    proj.hi = {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
               -std::numeric_limits<double>::infinity()};
    for (const auto& p : pixels) {
        const auto v = proj.project(p);
        for (int k = 0; k < 3; ++k) {
            proj.lo[static_cast<std::size_t>(k)] = std::min(proj.lo[static_cast<std::size_t>(k)], v(k));
            proj.hi[static_cast<std::size_t>(k)] = std::max(proj.hi[static_cast<std::size_t>(k)], v(k));
        }
    }
    return proj;
}

RgbImage render_rgb_image(const EmbeddingRaster& raster, const Projection3& proj) {
    if (raster.channels - 1 != proj.mean.size()) {
        throw InputError("projection does not match raster channels");
    }
    RgbImage img(raster.grid.width, raster.grid.height);
    for (std::uint32_t row = 0; row < raster.grid.height; ++row) {
        for (std::uint32_t col = 0; col < raster.grid.width; ++col) {
            const auto i = std::size_t{row} * raster.grid.width + col;
            if (!masked_in(raster, i)) {
                continue;
            }
            const auto v = proj.project(raster.pixel(i));
            Rgb c{};
            for (std::size_t k = 0; k < 3; ++k) {
                const double span = proj.hi[k] - proj.lo[k];
                const double t = span > 1e-12 ? (v(static_cast<Eigen::Index>(k)) - proj.lo[k]) / span : 0.5;
                c[k] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
            }
            img.set(col, row, c);
        }
    }
    return img;
}

void render_rgb(const EmbeddingRaster& raster, const Projection3& proj, const std::filesystem::path& path) {
    write_png(path, render_rgb_image(raster, proj));
}

} // namespace tempo
