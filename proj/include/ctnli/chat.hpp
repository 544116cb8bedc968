#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "ctnli/errors.hpp"

namespace ctnli {

enum class Role { System, User, Assistant };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "?";
}

inline Role parse_role(const std::string& s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw Error("unknown role: " + s);
}

struct ChatMessage {
  Role role = Role::User;
  std::string text;

  bool operator==(const ChatMessage&) const = default;
};

struct GenerationConfig {
  std::string model_name;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::string safety_setting;
  std::chrono::milliseconds request_timeout{60'000};

  void validate() const {
    if (temperature < 0.0 || temperature > 2.0) {
      throw Error("temperature out of range [0,2]: " + std::to_string(temperature));
    }
    if (max_output_tokens < 1) {
      throw Error("max_output_tokens must be >= 1");
    }
  }

  bool operator==(const GenerationConfig&) const = default;
};

}  // namespace ctnli
