#pragma once

#include <stdexcept>
#include <string>

namespace ctnli {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- corpus ----

class MalformedRecord : public Error {
 public:
  MalformedRecord(const std::string& locus, const std::string& what)
      : Error(locus + ": " + what), locus_(locus) {}
  const std::string& locus() const { return locus_; }

 private:
  std::string locus_;
};

class DuplicateId : public Error {
 public:
  explicit DuplicateId(const std::string& id) : Error("duplicate id: " + id), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class MissingTrialReference : public Error {
 public:
  MissingTrialReference(const std::string& statement_id, const std::string& trial_id)
      : Error("statement " + statement_id + " references unknown trial " + trial_id),
        trial_id_(trial_id) {}
  const std::string& trial_id() const { return trial_id_; }

 private:
  std::string trial_id_;
};

class UnknownSection : public Error {
 public:
  explicit UnknownSection(const std::string& name)
      : Error("unknown section name: " + name) {}
};

class UnknownTrial : public Error {
 public:
  explicit UnknownTrial(const std::string& id) : Error("unknown trial: " + id) {}
};

class SectionAbsent : public Error {
 public:
  SectionAbsent(const std::string& trial_id, const std::string& section)
      : Error("trial " + trial_id + " has no section " + section) {}
};

class UnknownStatement : public Error {
 public:
  explicit UnknownStatement(const std::string& id) : Error("unknown statement: " + id) {}
};

// ---- prompt ----

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& what) : Error(what) {}
};

class UnknownPromptId : public Error {
 public:
  explicit UnknownPromptId(int id)
      : Error("unknown extraction prompt id: " + std::to_string(id)) {}
};

// ---- backend ----

enum class ErrorClass {
  AuthError,         // non-retryable
  RateLimited,       // retryable with backoff
  Timeout,           // retryable
  ServerError,       // retryable up to cap
  ContentFiltered,   // non-retryable, recorded
  FixtureMiss,       // MockReplay only
  CacheCorrupt,      // treated as miss + warning
};

inline const char* to_string(ErrorClass c) {
  switch (c) {
    case ErrorClass::AuthError: return "AuthError";
    case ErrorClass::RateLimited: return "RateLimited";
    case ErrorClass::Timeout: return "Timeout";
    case ErrorClass::ServerError: return "ServerError";
    case ErrorClass::ContentFiltered: return "ContentFiltered";
    case ErrorClass::FixtureMiss: return "FixtureMiss";
    case ErrorClass::CacheCorrupt: return "CacheCorrupt";
  }
  return "?";
}

inline bool retryable(ErrorClass c) {
  return c == ErrorClass::RateLimited || c == ErrorClass::Timeout ||
         c == ErrorClass::ServerError;
}

class BackendError : public Error {
 public:
  BackendError(ErrorClass klass, const std::string& what, int attempts = 1)
      : Error(std::string(to_string(klass)) + ": " + what),
        class_(klass),
        attempts_(attempts) {}
  ErrorClass error_class() const { return class_; }
  int attempts() const { return attempts_; }

 private:
  ErrorClass class_;
  int attempts_;
};

// ---- infer ----

class PlanMismatch : public Error {
 public:
  explicit PlanMismatch(const std::string& what) : Error("plan mismatch: " + what) {}
};

// ---- eval ----

class MissingPrediction : public Error {
 public:
  explicit MissingPrediction(const std::string& id)
      : Error("no prediction for statement: " + id) {}
};

class DanglingLink : public Error {
 public:
  explicit DanglingLink(const std::string& id)
      : Error("manifest link references unknown statement: " + id) {}
};

class MissingGold : public Error {
 public:
  explicit MissingGold(const std::string& id)
      : Error("statement has no gold label: " + id) {}
};

class MismatchedDatasets : public Error {
 public:
  explicit MismatchedDatasets(const std::string& what) : Error(what) {}
};

}  // namespace ctnli
