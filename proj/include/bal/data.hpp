#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "bal/signal.hpp"
#include "bal/tensor.hpp"

namespace bal {

enum class DataErrorCode { io, bad_manifest, unresolvable_column, no_valid_rows, timestamp_disorder, preprocessing };

std::string_view to_string(DataErrorCode code);

class DataError : public std::runtime_error {
public:
    DataError(DataErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
    DataErrorCode code() const noexcept { return code_; }

private:
    DataErrorCode code_;
};

/// A column is addressed by header name or by 0-based position.
struct ColumnRef {
    std::string name;
    std::optional<std::size_t> index;
};

struct ColumnMapping {
    ColumnRef timestamp, x, y, z, user, device, label;
};

/// Parameters of the synthetic corpus.
struct SyntheticParams {
    std::size_t num_users = 3;
    std::size_t num_classes = 6;
    std::size_t windows_per_class = 20;
    double rate_hz = 100.0;
    double window_seconds = 2.0;
    std::uint64_t seed = 1;
    /// Standard deviation of the additive Gaussian noise.
    double noise = 0.5;
    /// Spread of the per-user style: rotation of the mean orientation (rad)
    /// and relative amplitude/frequency changes.
    double user_variation = 0.1;
    /// Spread of the per-window style: orientation jitter (rad) and relative
    /// amplitude change of each window.
    double window_jitter = 0.1;

    friend bool operator==(const SyntheticParams&, const SyntheticParams&) = default;
};

void to_json(nlohmann::json& j, const SyntheticParams& p);
void from_json(const nlohmann::json& j, SyntheticParams& p);

/// Describes where raw sensor rows come from and how to window them.
struct DatasetManifest {
    std::string dataset_id = "synthetic";
    std::vector<std::string> files;
    char delimiter = ',';
    bool has_header = true;
    ColumnMapping columns;
    /// Multiplier turning timestamp values into seconds.
    double timestamp_scale = 1.0;
    /// Native sampling rate per device id; default_rate_hz for others.
    std::map<std::string, double> device_rates;
    double default_rate_hz = 0.0;
    double target_rate_hz = 100.0;
    double window_seconds = 2.0;
    std::vector<std::string> classes;
    std::optional<SyntheticParams> synthetic;
    /// Directory that relative file paths are resolved against.
    std::filesystem::path base_dir;

    void validate() const;
    double rate_for(const std::string& device) const;

    static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static DatasetManifest load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

/// Rows of one (user, device) pair, sorted by time.
struct RawStream {
    std::string user;
    std::string device;
    double rate_hz = 0.0;
    std::vector<Sample> samples;
};

struct IngestResult {
    std::vector<RawStream> streams;
    std::size_t rows_parsed = 0;
    std::size_t rows_skipped = 0;
};

/// Reads every manifest file (or generates the synthetic corpus). Rows out of
/// order by at most two sample periods are stable-sorted; worse disorder is a
/// timestamp_disorder error. Malformed rows and rows with labels outside the
/// class list are counted and skipped.
IngestResult ingest(const DatasetManifest& manifest);

/// Synthetic labeled streams, one per user (device "synthetic"). Each class
/// has its own mean orientation, oscillation frequency and amplitude. Users
/// differ by a rotation of the orientation and by amplitude/frequency scale.
/// Activities come in bouts that align with window boundaries.
std::vector<RawStream> generate_synthetic(const SyntheticParams& p);

/// CSV with columns timestamp,x,y,z,user,device,label (label as class name).
void write_csv(const std::vector<RawStream>& streams, const std::vector<std::string>& classes,
               const std::filesystem::path& path);

/// Preprocessed windows of one user, in deterministic order.
struct UserWindows {
    std::string user;
    Tensor features;  // [n, 3, F] approximate coefficients
    Tensor display;   // [n, 3, L] decimated samples
    std::vector<std::size_t> labels;
    std::vector<std::uint64_t> window_ids;
    std::vector<std::string> devices;

    std::size_t size() const noexcept { return labels.size(); }
};

struct WindowStore {
    static constexpr std::string_view kMagic = "EBALWIN1";
    static constexpr std::uint32_t kFormatVersion = 1;

    nlohmann::json provenance;
    std::vector<std::string> classes;
    std::map<std::string, UserWindows> users;

    std::uint64_t provenance_hash() const;
    std::vector<std::string> user_ids() const;
    std::size_t feature_length() const;
    /// Class histogram over all users.
    std::vector<std::size_t> histogram() const;

    void save(const std::filesystem::path& dir) const;
    static WindowStore load(const std::filesystem::path& dir);
};

struct PrepReport {
    std::size_t windows = 0;
    std::size_t discarded_windows = 0;
    /// Stored feature values over raw values (timestamp plus 3 axes per sample).
    double compression_ratio = 0.0;
};

/// segment -> decimate -> dwt_approx for every stream, with provenance.
WindowStore preprocess_and_store(const IngestResult& data, const DatasetManifest& manifest,
                                 PrepReport* report = nullptr);

}  // namespace bal
