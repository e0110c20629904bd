#pragma once

#include <string>
#include <vector>

#include "pbev/autodiff.hpp"

namespace pbev::balance {

// Per-epoch task loss bookkeeping and the reciprocal-sum weight update.
// Weights start at 1 for every task and are normalized to sum 1 after each
// update.
struct TaskLossLedger {
    std::vector<std::string> tasks;
    std::vector<double> priors;   // c_t > 0
    std::vector<double> sums;     // accumulated L_t for the running epoch
    std::vector<long> samples;    // accumulation count (diagnostics)
    std::vector<double> weights;  // w_t
    std::vector<double> w_hat;    // last unnormalized weights (degenerate-task fallback)
    int epoch = 0;
    int negative_flags = 0;  // negative loss values recorded (log-sigma terms allow them)
    int missing_flags = 0;   // combined_loss calls with absent task losses

    static TaskLossLedger make(std::vector<std::string> tasks, std::vector<double> priors);
    int index(const std::string& name) const;
};

// Detached bookkeeping; value is a plain number, not a graph node.
void accumulate(TaskLossLedger& ledger, int task, double value);

// End of epoch: w_hat_t = c_t / L_t (tasks with L_t <= 1e-9 keep their
// previous w_hat), w_t = w_hat_t / sum(w_hat), sums reset.
void update_weights(TaskLossLedger& ledger);

// Weighted sum of per-task batch losses; weights enter as constants. A null
// node contributes zero and bumps the missing counter.
ad::NodePtr combined_loss(TaskLossLedger& ledger,
                          const std::vector<ad::NodePtr>& task_losses);

}  // namespace pbev::balance
