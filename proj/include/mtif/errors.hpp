#pragma once

#include <stdexcept>
#include <string>

namespace mtif {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimMismatch : Error {
    using Error::Error;
};

struct InvalidConfig : Error {
    using Error::Error;
};

/// Cholesky failure of a task-diagonal Hessian block. `task` is the offending
/// block index; no automatic damping is applied here.
struct BlockNotPd : Error {
    int task;
    explicit BlockNotPd(int k)
        : Error("Hessian block H_" + std::to_string(k) + std::to_string(k) +
                " is not positive definite"),
          task(k) {}
};

struct SchurNotPd : Error {
    SchurNotPd() : Error("Schur complement N is not positive definite") {}
};

struct NotPd : Error {
    NotPd() : Error("matrix is not positive definite") {}
};

struct NotConverged : Error {
    double final_grad_norm;
    explicit NotConverged(double g, const std::string& context = "")
        : Error("solver did not converge (grad inf-norm " + std::to_string(g) + ")" +
                (context.empty() ? "" : " [" + context + "]")),
          final_grad_norm(g) {}
};

struct SingularSystem : Error {
    using Error::Error;
};

struct DegenerateTask : Error {
    int task;
    explicit DegenerateTask(int j)
        : Error("task " + std::to_string(j) + " has no identifiable parameters"), task(j) {}
};

struct SameTask : Error {
    SameTask() : Error("between-task influence requires source task != target task") {}
};

struct InvalidTask : Error {
    explicit InvalidTask(int k) : Error("invalid task index " + std::to_string(k)) {}
};

struct EmptySplit : Error {
    using Error::Error;
};

struct RankDeficient : Error {
    using Error::Error;
};

struct InvalidRatios : Error {
    using Error::Error;
};

struct NotClassification : Error {
    NotClassification() : Error("operation requires {0,1} classification labels") {}
};

struct ParseError : Error {
    long line;
    ParseError(long line_no, const std::string& what)
        : Error("parse error at line " + std::to_string(line_no) + ": " + what), line(line_no) {}
};

struct SchemaError : Error {
    using Error::Error;
};

struct MissingInput : Error {
    using Error::Error;
};

struct IncompleteMatrix : Error {
    using Error::Error;
};

struct IndexMismatch : Error {
    using Error::Error;
};

struct LengthMismatch : Error {
    using Error::Error;
};

}  // namespace mtif
