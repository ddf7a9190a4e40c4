#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "melu/matrix.hpp"
#include "melu/meta_trainer.hpp"
#include "melu/model.hpp"

// nlohmann::json conversions for the library's value types. Doubles are
// written in shortest round-trip form, so parameter files reload bit-exactly.
namespace melu {

void to_json(nlohmann::json& j, const Matrix& m);
void from_json(const nlohmann::json& j, Matrix& m);

void to_json(nlohmann::json& j, const FieldSpec& f);
void from_json(const nlohmann::json& j, FieldSpec& f);

void to_json(nlohmann::json& j, const ContentSchema& s);
void from_json(const nlohmann::json& j, ContentSchema& s);

void to_json(nlohmann::json& j, const Profile& p);
void from_json(const nlohmann::json& j, Profile& p);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

std::string side_name(Side side);
Side parse_side(const std::string& text);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j,
                     int indent = 1);

}  // namespace melu
