//! SystemVerilog emission: reference RTL, self-checking testbench, miter.
//!
//! Output is a conservative SV-2012 subset (`always_ff`/`always_comb`,
//! `localparam` encodings) so it runs on any event-driven simulator.
//! Testbench timing mirrors [`crate::sim`]: inputs are driven 1 time unit
//! after the rising edge, outputs are sampled on the falling edge.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::guard::Guard;
use crate::model::{validate_fsm, SemanticFsm, ValidationReport};
use crate::sim::Trace;

/// Printed by the testbench when every row matches.
pub const PASS_SENTINEL: &str = "LLMFSM_PASS";
/// Prefix of the line printed on the first mismatch.
pub const FAIL_SENTINEL: &str = "LLMFSM_FAIL";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Encoding {
    #[default]
    OneHot,
    Binary,
}

impl std::str::FromStr for Encoding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "onehot" | "one-hot" => Ok(Encoding::OneHot),
            "binary" => Ok(Encoding::Binary),
            _ => Err(format!("unknown encoding `{s}` (expected onehot or binary)")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EmitError {
    #[error("invalid FSM: {0}")]
    Invalid(ValidationReport),
    #[error("interface mismatch: {}", .0.join(", "))]
    Interface(Vec<String>),
}

const SV_KEYWORDS: &[&str] = &[
    "accept_on", "alias", "always", "always_comb", "always_ff", "always_latch", "and", "assert",
    "assign", "assume", "automatic", "before", "begin", "bind", "bins", "binsof", "bit", "break",
    "buf", "bufif0", "bufif1", "byte", "case", "casex", "casez", "cell", "chandle", "checker",
    "class", "clocking", "cmos", "config", "const", "constraint", "context", "continue", "cover",
    "covergroup", "coverpoint", "cross", "deassign", "default", "defparam", "design", "disable",
    "dist", "do", "edge", "else", "end", "endcase", "endchecker", "endclass", "endclocking",
    "endconfig", "endfunction", "endgenerate", "endgroup", "endinterface", "endmodule",
    "endpackage", "endprimitive", "endprogram", "endproperty", "endsequence", "endspecify",
    "endtable", "endtask", "enum", "event", "eventually", "expect", "export", "extends", "extern",
    "final", "first_match", "for", "force", "foreach", "forever", "fork", "forkjoin", "function",
    "generate", "genvar", "global", "highz0", "highz1", "if", "iff", "ifnone", "ignore_bins",
    "illegal_bins", "implements", "implies", "import", "incdir", "include", "initial", "inout",
    "input", "inside", "instance", "int", "integer", "interconnect", "interface", "intersect",
    "join", "join_any", "join_none", "large", "let", "liblist", "library", "local", "localparam",
    "logic", "longint", "macromodule", "matches", "medium", "modport", "module", "nand",
    "negedge", "nettype", "new", "nexttime", "nmos", "nor", "noshowcancelled", "not", "notif0",
    "notif1", "null", "or", "output", "package", "packed", "parameter", "pmos", "posedge",
    "primitive", "priority", "program", "property", "protected", "pull0", "pull1", "pulldown",
    "pullup", "pulsestyle_ondetect", "pulsestyle_onevent", "pure", "rand", "randc", "randcase",
    "randsequence", "rcmos", "real", "realtime", "ref", "reg", "reject_on", "release", "repeat",
    "restrict", "return", "rnmos", "rpmos", "rtran", "rtranif0", "rtranif1", "s_always",
    "s_eventually", "s_nexttime", "s_until", "s_until_with", "scalared", "sequence", "shortint",
    "shortreal", "showcancelled", "signed", "small", "soft", "solve", "specify", "specparam",
    "static", "string", "strong", "strong0", "strong1", "struct", "super", "supply0", "supply1",
    "sync_accept_on", "sync_reject_on", "table", "tagged", "task", "this", "throughout", "time",
    "timeprecision", "timeunit", "tran", "tranif0", "tranif1", "tri", "tri0", "tri1", "triand",
    "trior", "trireg", "type", "typedef", "union", "unique", "unique0", "unsigned", "until",
    "until_with", "untyped", "use", "uwire", "var", "vectored", "virtual", "void", "wait",
    "wait_order", "wand", "weak", "weak0", "weak1", "while", "wildcard", "wire", "with", "within",
    "wor", "xnor", "xor",
];

/// `name` as an SV identifier; reserved words become escaped identifiers.
pub fn sv_ident(name: &str) -> String {
    if SV_KEYWORDS.binary_search(&name).is_ok() {
        format!("\\{name} ")
    } else {
        name.to_string()
    }
}

/// Smallest `base`, `base_1`, `base_2`, ... not in `taken`; records it.
fn fresh(base: &str, taken: &mut BTreeSet<String>) -> String {
    let mut name = base.to_string();
    let mut n = 0;
    while taken.contains(&name) || SV_KEYWORDS.binary_search(&name.as_str()).is_ok() {
        n += 1;
        name = format!("{base}_{n}");
    }
    taken.insert(name.clone());
    name
}

fn signal_names(f: &SemanticFsm) -> BTreeSet<String> {
    let mut s: BTreeSet<String> = f.inputs.iter().cloned().collect();
    s.extend(f.outputs.iter().map(|o| o.name.clone()));
    s.insert(f.clock.clone());
    s.insert(f.reset_signal.clone());
    s.insert(f.name.clone());
    s
}

fn width_decl(w: u32) -> String {
    if w <= 1 {
        String::new()
    } else {
        format!("[{}:0] ", w - 1)
    }
}

fn literal(width: u32, value: u64) -> String {
    format!("{width}'d{value}")
}

fn clog2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

fn guard_expr(g: &Guard) -> String {
    match g {
        Guard::Const(b) => if *b { "1'b1" } else { "1'b0" }.to_string(),
        Guard::Var(v) => sv_ident(v),
        // And/Or already carry their own parentheses.
        Guard::Not(inner) => format!("!{}", guard_expr(inner)),
        Guard::And(cs) => {
            format!("({})", cs.iter().map(guard_expr).collect::<Vec<_>>().join(" && "))
        }
        Guard::Or(cs) => {
            format!("({})", cs.iter().map(guard_expr).collect::<Vec<_>>().join(" || "))
        }
    }
}

fn check(f: &SemanticFsm) -> Result<(), EmitError> {
    let report = validate_fsm(f);
    if report.is_empty() {
        Ok(())
    } else {
        Err(EmitError::Invalid(report))
    }
}

/// Synthesizable RTL for `f`: a module named `f.name` with a synchronous,
/// active-high reset.
pub fn emit_rtl(f: &SemanticFsm, encoding: Encoding) -> Result<String, EmitError> {
    check(f)?;
    Ok(rtl_module(f, &f.name, encoding))
}

fn rtl_module(f: &SemanticFsm, module: &str, encoding: Encoding) -> String {
    let mut taken = signal_names(f);
    let state_q = fresh("state_q", &mut taken);
    let state_d = fresh("state_d", &mut taken);
    let params: Vec<String> =
        f.states.iter().map(|s| fresh(&format!("ST_{}", s.name), &mut taken)).collect();
    let n = f.states.len();
    let width = match encoding {
        Encoding::OneHot => n as u32,
        Encoding::Binary => clog2(n).max(1),
    };
    let code = |i: usize| match encoding {
        Encoding::OneHot => format!("{width}'b{}", onehot_bits(n, i)),
        Encoding::Binary => literal(width, i as u64),
    };
    let param_of = |name: &str| &params[f.state_index(name).expect("validated")];
    let clk = sv_ident(&f.clock);
    let rst = sv_ident(&f.reset_signal);

    let mut out = String::new();
    let mut ports = vec![format!("input  logic {clk}"), format!("input  logic {rst}")];
    ports.extend(f.inputs.iter().map(|i| format!("input  logic {}", sv_ident(i))));
    ports.extend(
        f.outputs
            .iter()
            .map(|o| format!("output logic {}{}", width_decl(o.width), sv_ident(&o.name))),
    );
    let _ = writeln!(out, "module {} (", sv_ident(module));
    let _ = writeln!(out, "  {}", ports.join(",\n  "));
    let _ = writeln!(out, ");");
    out.push('\n');

    let style = match encoding {
        Encoding::OneHot => "one-hot",
        Encoding::Binary => "binary",
    };
    let _ = writeln!(out, "  // {n} states, {style} encoding");
    for (i, p) in params.iter().enumerate() {
        let _ = writeln!(out, "  localparam logic {}{p} = {};", width_decl(width), code(i));
    }
    out.push('\n');
    let _ = writeln!(out, "  logic {}{state_q}, {state_d};", width_decl(width));
    out.push('\n');

    let _ = writeln!(out, "  always_ff @(posedge {clk}) begin");
    let _ = writeln!(out, "    if ({rst})");
    let _ = writeln!(out, "      {state_q} <= {};", param_of(&f.reset_state));
    let _ = writeln!(out, "    else");
    let _ = writeln!(out, "      {state_q} <= {state_d};");
    let _ = writeln!(out, "  end");
    out.push('\n');

    let _ = writeln!(out, "  always_comb begin");
    let _ = writeln!(out, "    {state_d} = {state_q};");
    let _ = writeln!(out, "    case ({state_q})");
    for (s, p) in f.states.iter().zip(&params) {
        let _ = writeln!(out, "      {p}: begin");
        if s.transitions.is_empty() {
            let _ = writeln!(out, "        {state_d} = {state_q};");
        }
        for (k, t) in s.transitions.iter().enumerate() {
            let kw = if k == 0 { "if" } else { "else if" };
            let _ = writeln!(
                out,
                "        {kw} ({}) {state_d} = {};",
                guard_expr(&t.guard),
                param_of(&t.next)
            );
        }
        if !s.transitions.is_empty() {
            let _ = writeln!(out, "        else {state_d} = {state_q};");
        }
        let _ = writeln!(out, "      end");
    }
    let _ = writeln!(out, "      default: {state_d} = {};", param_of(&f.reset_state));
    let _ = writeln!(out, "    endcase");
    let _ = writeln!(out, "  end");
    out.push('\n');

    let _ = writeln!(out, "  always_comb begin");
    for o in &f.outputs {
        let _ = writeln!(out, "    {} = {};", sv_ident(&o.name), literal(o.width, 0));
    }
    let _ = writeln!(out, "    case ({state_q})");
    for (s, p) in f.states.iter().zip(&params) {
        let _ = writeln!(out, "      {p}: begin");
        for o in &f.outputs {
            let _ = writeln!(
                out,
                "        {} = {};",
                sv_ident(&o.name),
                literal(o.width, s.outputs[&o.name])
            );
        }
        let _ = writeln!(out, "      end");
    }
    let _ = writeln!(out, "      default: ;");
    let _ = writeln!(out, "    endcase");
    let _ = writeln!(out, "  end");
    out.push('\n');
    let _ = writeln!(out, "endmodule");
    out
}

fn onehot_bits(n: usize, i: usize) -> String {
    (0..n).rev().map(|b| if b == i { '1' } else { '0' }).collect()
}

/// Name of the testbench module emitted for `f`.
pub fn testbench_name(f: &SemanticFsm) -> String {
    format!("tb_{}", f.name)
}

/// Self-checking testbench replaying `golden` against a DUT named `f.name`.
pub fn emit_testbench(f: &SemanticFsm, golden: &Trace) -> Result<String, EmitError> {
    check(f)?;
    if !golden.matches_interface(f) {
        let mut diff = Vec::new();
        if golden.input_names != f.inputs {
            diff.push(format!("inputs [{}]", golden.input_names.join(", ")));
        }
        let outs: Vec<String> = f.outputs.iter().map(|o| o.name.clone()).collect();
        if golden.output_names != outs {
            diff.push(format!("outputs [{}]", golden.output_names.join(", ")));
        }
        if diff.is_empty() {
            diff.push("row width".into());
        }
        return Err(EmitError::Interface(diff));
    }

    let mut taken = signal_names(f);
    let tb = fresh(&testbench_name(f), &mut taken);
    let dut = fresh("dut", &mut taken);
    let t = fresh("t", &mut taken);
    let n_rows = fresh("N_ROWS", &mut taken);
    let stim = fresh("stim", &mut taken);
    let golden_arrays: Vec<String> =
        f.outputs.iter().map(|o| fresh(&format!("exp_{}", o.name), &mut taken)).collect();
    let clk = sv_ident(&f.clock);
    let rst = sv_ident(&f.reset_signal);
    let n_in = f.inputs.len();
    let rows = golden.rows.len();

    let mut out = String::new();
    let _ = writeln!(out, "`timescale 1ns/1ps");
    out.push('\n');
    let _ = writeln!(out, "module {};", sv_ident(&tb));
    let _ = writeln!(out, "  logic {clk} = 1'b0;");
    let _ = writeln!(out, "  logic {rst} = 1'b1;");
    for i in &f.inputs {
        let _ = writeln!(out, "  logic {} = 1'b0;", sv_ident(i));
    }
    for o in &f.outputs {
        let _ = writeln!(out, "  logic {}{};", width_decl(o.width), sv_ident(&o.name));
    }
    out.push('\n');

    let mut conns = vec![format!(".{clk}({clk})"), format!(".{rst}({rst})")];
    conns.extend(f.inputs.iter().map(|i| {
        let i = sv_ident(i);
        format!(".{i}({i})")
    }));
    conns.extend(f.outputs.iter().map(|o| {
        let o = sv_ident(&o.name);
        format!(".{o}({o})")
    }));
    let _ = writeln!(out, "  {} {dut} (", sv_ident(&f.name));
    let _ = writeln!(out, "    {}", conns.join(",\n    "));
    let _ = writeln!(out, "  );");
    out.push('\n');
    let _ = writeln!(out, "  always #5 {clk} = ~{clk};");
    out.push('\n');

    let _ = writeln!(out, "  localparam int {n_rows} = {rows};");
    let depth = rows.max(1);
    if n_in > 0 {
        let _ = writeln!(out, "  logic {}{stim} [0:{}];", width_decl(n_in as u32), depth - 1);
    }
    for (o, arr) in f.outputs.iter().zip(&golden_arrays) {
        let _ = writeln!(out, "  logic {}{arr} [0:{}];", width_decl(o.width), depth - 1);
    }
    out.push('\n');

    let _ = writeln!(out, "  initial begin");
    for (r, row) in golden.rows.iter().enumerate() {
        let mut line = String::from("   ");
        if n_in > 0 {
            let bits: String = row.inputs.iter().map(|&b| if b { '1' } else { '0' }).collect();
            let _ = write!(line, " {stim}[{r}] = {n_in}'b{bits};");
        }
        for ((o, arr), v) in f.outputs.iter().zip(&golden_arrays).zip(&row.outputs) {
            let _ = write!(line, " {arr}[{r}] = {};", literal(o.width, *v));
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "  end");
    out.push('\n');

    let _ = writeln!(out, "  initial begin");
    let _ = writeln!(out, "`ifdef LLMFSM_DUMP");
    let _ = writeln!(out, "    $dumpfile(\"{tb}.vcd\");");
    let _ = writeln!(out, "    $dumpvars(0, {});", sv_ident(&tb));
    let _ = writeln!(out, "`endif");
    let _ = writeln!(out, "    @(posedge {clk});");
    let _ = writeln!(out, "    @(posedge {clk});");
    let _ = writeln!(out, "    #1 {rst} = 1'b0;");
    let _ = writeln!(out, "    for (int {t} = 0; {t} < {n_rows}; {t}++) begin");
    if n_in > 0 {
        let targets: Vec<String> = f.inputs.iter().map(|i| sv_ident(i)).collect();
        let _ = writeln!(out, "      {{{}}} = {stim}[{t}];", targets.join(", "));
    }
    let _ = writeln!(out, "      @(negedge {clk});");
    for (o, arr) in f.outputs.iter().zip(&golden_arrays) {
        let sig = sv_ident(&o.name);
        let _ = writeln!(out, "      if ({sig} !== {arr}[{t}]) begin");
        let _ = writeln!(
            out,
            "        $display(\"{FAIL_SENTINEL} cycle=%0d signal={} expect=%0d got=%0d\", {t}, {arr}[{t}], {sig});",
            o.name
        );
        let _ = writeln!(out, "        $finish;");
        let _ = writeln!(out, "      end");
    }
    let _ = writeln!(out, "      @(posedge {clk});");
    let _ = writeln!(out, "      #1;");
    let _ = writeln!(out, "    end");
    let _ = writeln!(out, "    $display(\"{PASS_SENTINEL}\");");
    let _ = writeln!(out, "    $finish;");
    let _ = writeln!(out, "  end");
    let _ = writeln!(out, "endmodule");
    Ok(out)
}

/// Name of the wrapper module emitted by [`emit_miter`].
pub const MITER_MODULE: &str = "miter";

/// Two RTL instances sharing clock, reset and inputs, with a single
/// `mismatch` output that ORs every per-output inequality.
///
/// When both machines share a module name they are emitted as
/// `<name>_ref` and `<name>_rec`.
pub fn emit_miter(a: &SemanticFsm, b: &SemanticFsm) -> Result<String, EmitError> {
    check(a)?;
    check(b)?;
    let mut diff = a.interface_diff(b);
    if a.clock != b.clock {
        diff.push(format!("clock {}", b.clock));
    }
    if a.reset_signal != b.reset_signal {
        diff.push(format!("reset {}", b.reset_signal));
    }
    if !diff.is_empty() {
        return Err(EmitError::Interface(diff));
    }

    let (name_a, name_b) = if a.name == b.name {
        (format!("{}_ref", a.name), format!("{}_rec", b.name))
    } else {
        (a.name.clone(), b.name.clone())
    };

    let mut taken = signal_names(a);
    taken.insert(name_a.clone());
    taken.insert(name_b.clone());
    let wrapper = fresh(MITER_MODULE, &mut taken);
    let mismatch = fresh("mismatch", &mut taken);
    let inst_a = fresh("u_ref", &mut taken);
    let inst_b = fresh("u_rec", &mut taken);
    let suffixed: Vec<(String, String)> = a
        .outputs
        .iter()
        .map(|o| {
            (fresh(&format!("{}_ref", o.name), &mut taken), fresh(&format!("{}_rec", o.name), &mut taken))
        })
        .collect();
    let clk = sv_ident(&a.clock);
    let rst = sv_ident(&a.reset_signal);

    let mut out = rtl_module(a, &name_a, Encoding::OneHot);
    out.push('\n');
    out.push_str(&rtl_module(b, &name_b, Encoding::OneHot));
    out.push('\n');

    let mut ports = vec![format!("input  logic {clk}"), format!("input  logic {rst}")];
    ports.extend(a.inputs.iter().map(|i| format!("input  logic {}", sv_ident(i))));
    ports.push(format!("output logic {mismatch}"));
    let _ = writeln!(out, "module {} (", sv_ident(&wrapper));
    let _ = writeln!(out, "  {}", ports.join(",\n  "));
    let _ = writeln!(out, ");");
    for (o, (ra, rb)) in a.outputs.iter().zip(&suffixed) {
        let _ = writeln!(out, "  logic {}{ra}, {rb};", width_decl(o.width));
    }
    out.push('\n');
    for (module, inst, side) in [(&name_a, &inst_a, 0), (&name_b, &inst_b, 1)] {
        let mut conns = vec![format!(".{clk}({clk})"), format!(".{rst}({rst})")];
        conns.extend(a.inputs.iter().map(|i| {
            let i = sv_ident(i);
            format!(".{i}({i})")
        }));
        conns.extend(a.outputs.iter().zip(&suffixed).map(|(o, (ra, rb))| {
            format!(".{}({})", sv_ident(&o.name), if side == 0 { ra } else { rb })
        }));
        let _ = writeln!(out, "  {} {inst} (", sv_ident(module));
        let _ = writeln!(out, "    {}", conns.join(",\n    "));
        let _ = writeln!(out, "  );");
    }
    out.push('\n');
    let terms: Vec<String> = suffixed.iter().map(|(ra, rb)| format!("({ra} != {rb})")).collect();
    let rhs = if terms.is_empty() { "1'b0".to_string() } else { terms.join("\n    | ") };
    let _ = writeln!(out, "  assign {mismatch} = {rhs};");
    let _ = writeln!(out, "endmodule");
    Ok(out)
}
