// Command-line front end: run, compare, oracle.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "gfmid/app/app.hpp"

int main(int argc, char** argv) {
    using namespace gfmid::app;

    CLI::App cli{"dq-frame admittance identification of a grid-forming inverter testbed (ERA, SEM, SFRA)"};
    cli.require_subcommand(1);
    cli.footer("Exit codes: 0 ok, 1 threshold or oracle failure, 2 input error, 3 runtime error.\n"
               "GFMID_WORKERS sets the number of sweep worker threads.");

    RunOptions run;
    std::string config, out;
    auto* run_cmd = cli.add_subcommand("run", "Simulate the plant and identify its admittance");
    run_cmd->add_option("--config", config, "INI configuration file (defaults when omitted)");
    run_cmd->add_option("--methods", run.methods, "all, or a comma-separated subset of era,sem,sfra")
        ->capture_default_str();
    run_cmd->add_option("--out", out, "Output directory (overrides output.directory)");

    CompareOptions cmp;
    auto* cmp_cmd = cli.add_subcommand("compare", "Compare two Bode CSV files over a band");
    cmp_cmd->add_option("bode_a", cmp.a, "First Bode CSV")->required();
    cmp_cmd->add_option("bode_b", cmp.b, "Second Bode CSV")->required();
    cmp_cmd->add_option("--band", cmp.band, "Band LO:HI in Hz")->capture_default_str();
    cmp_cmd->add_option("--out", cmp.out, "Report CSV path (summary goes next to it as .txt)")->capture_default_str();
    cmp_cmd->add_option("--thresholds", cmp.thresholds, "Limits MAG_DB:PHASE_DEG")->capture_default_str();

    OracleOptions oracle;
    std::string tolerance, flip;
    auto* oracle_cmd = cli.add_subcommand("oracle", "Check all methods against the closed-form RL admittance");
    oracle_cmd->add_option("--out", oracle.out_dir, "Output directory")->capture_default_str();
    oracle_cmd->add_option("--tolerance", tolerance, "Override every limit with MAG_PCT:PHASE_DEG");
    oracle_cmd->add_option("--flip-sign", flip, "")->group("");  // negative control: METHOD:CHANNEL

    try {
        cli.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return cli.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return cli.exit(e);
    } catch (const CLI::ParseError& e) {
        cli.exit(e);
        return kInputError;
    }

    if (*run_cmd) {
        if (!config.empty()) run.config_path = config;
        if (!out.empty()) run.out_dir = out;
        return cmd_run(run);
    }
    if (*cmp_cmd) return cmd_compare(cmp);
    if (!tolerance.empty()) oracle.tolerance = tolerance;
    if (!flip.empty()) oracle.flip = flip;
    return cmd_oracle(oracle);
}
